#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "relprobe/cli.hpp"
#include "relprobe/corpus.hpp"
#include "relprobe/deptree.hpp"
#include "relprobe/error.hpp"
#include "relprobe/gradcheck.hpp"
#include "relprobe/probegen.hpp"
#include "relprobe/probing.hpp"
#include "relprobe/synth.hpp"
#include "relprobe/training.hpp"

namespace py = pybind11;
using namespace relprobe;

namespace {

using SpanTuple = std::pair<int, int>;

Span to_span(const SpanTuple& t) { return {t.first, t.second}; }
SpanTuple from_span(const Span& s) { return {s.start, s.end}; }

std::optional<Split> split_arg(const std::string& name) {
  if (name.empty() || name == "all") return std::nullopt;
  return parse_split(name);
}

py::array_t<float> as_array(const RepMatrix& reps) {
  py::array_t<float> out({reps.rows(), reps.dim()});
  std::copy(reps.data().begin(), reps.data().end(), out.mutable_data());
  return out;
}

RepMatrix from_array(const std::vector<std::string>& ids, py::array_t<float, py::array::c_style | py::array::forcecast> x) {
  if (x.ndim() != 2) throw Error("representations must be a 2-d array");
  if (static_cast<size_t>(x.shape(0)) != ids.size()) throw Error("ids and rows differ in length");
  const size_t dim = x.shape(1);
  RepMatrix reps(dim);
  for (size_t i = 0; i < ids.size(); ++i) reps.append(ids[i], {x.data() + i * dim, dim});
  return reps;
}

py::dict prf(const PRF& r) {
  py::dict d;
  d["p"] = r.p;
  d["r"] = r.r;
  d["f1"] = r.f1;
  return d;
}

}  // namespace

PYBIND11_MODULE(_relprobe, m) {
  m.doc() = "relprobe core bindings";
  py::register_exception<Error>(m, "RelprobeError", PyExc_RuntimeError);

  py::class_<Sentence>(m, "Sentence")
      .def(py::init<>())
      .def_readwrite("id", &Sentence::id)
      .def_readwrite("tokens", &Sentence::tokens)
      .def_readwrite("pos", &Sentence::pos)
      .def_readwrite("ner", &Sentence::ner)
      .def_readwrite("dep_head", &Sentence::dep_head)
      .def_readwrite("dep_label", &Sentence::dep_label)
      .def_property(
          "head", [](const Sentence& s) { return from_span(s.head); },
          [](Sentence& s, const SpanTuple& t) { s.head = to_span(t); })
      .def_property(
          "tail", [](const Sentence& s) { return from_span(s.tail); },
          [](Sentence& s, const SpanTuple& t) { s.tail = to_span(t); })
      .def_readwrite("relation", &Sentence::relation)
      .def("__len__", &Sentence::size)
      .def("__eq__", [](const Sentence& a, const Sentence& b) { return a == b; })
      .def("__repr__", [](const Sentence& s) { return "<Sentence " + s.id + " (" + std::to_string(s.size()) + " tokens)>"; });

  py::class_<Corpus>(m, "Corpus")
      .def(py::init<>())
      .def_readwrite("train", &Corpus::train)
      .def_readwrite("validation", &Corpus::validation)
      .def_readwrite("test", &Corpus::test)
      .def_readonly("label_inventory", &Corpus::label_inventory)
      .def_readonly("negative_label", &Corpus::negative_label)
      .def("__len__", &Corpus::size)
      .def("to_jsonl", [](const Corpus& c) {
        std::ostringstream out;
        write_corpus_jsonl(c, out);
        return out.str();
      });

  m.def(
      "load_corpus",
      [](const std::filesystem::path& path, const std::string& format, std::optional<std::string> negative_label,
         double holdout, std::uint64_t holdout_seed) {
        LoadOptions o;
        o.negative_label = std::move(negative_label);
        o.holdout_fraction = holdout;
        o.holdout_seed = holdout_seed;
        return load_corpus(path, parse_corpus_format(format), o);
      },
      py::arg("path"), py::arg("format") = "generic-jsonl", py::arg("negative_label") = py::none(),
      py::arg("holdout") = 0.0, py::arg("holdout_seed") = 0);
  m.def(
      "read_corpus_jsonl",
      [](const std::string& text) {
        std::istringstream in(text);
        return read_corpus_jsonl(in);
      },
      py::arg("text"));
  m.def("validate_sentence", &validate_sentence);
  m.def("mask_entities", &mask_entities);
  m.def("corpus_stats", [](const Corpus& c) {
    auto s = corpus_stats(c);
    py::dict d;
    d["train"] = s.train;
    d["validation"] = s.validation;
    d["test"] = s.test;
    d["labels"] = s.labels;
    d["negative_fraction"] = s.negative_fraction;
    d["mean_length"] = s.mean_length;
    return d;
  });

  m.def(
      "synth",
      [](size_t n_train, size_t n_val, size_t n_test, std::uint64_t seed, int max_pp, bool order_controlled) {
        SynthConfig c = default_synth_config();
        c.n_train = n_train;
        c.n_val = n_val;
        c.n_test = n_test;
        c.seed = seed;
        if (max_pp >= 0) c.max_pp = max_pp;
        return order_controlled ? generate_order_controlled(c, seed) : generate(c);
      },
      py::arg("n_train") = 64, py::arg("n_val") = 16, py::arg("n_test") = 16, py::arg("seed") = 0,
      py::arg("max_pp") = -1, py::arg("order_controlled") = false);

  m.def("tree_depth", [](const std::vector<int>& dep_head) { return tree_depth(build_tree(dep_head)); });
  m.def(
      "sdp",
      [](const std::vector<int>& dep_head, const SpanTuple& head, const SpanTuple& tail) {
        auto r = sdp(build_tree(dep_head), to_span(head), to_span(tail));
        py::dict d;
        d["path"] = r.path;
        d["lca"] = r.lca;
        d["depth"] = r.depth;
        return d;
      },
      py::arg("dep_head"), py::arg("head"), py::arg("tail"));
  m.def(
      "prune",
      [](const std::vector<int>& dep_head, const SpanTuple& head, const SpanTuple& tail, int k) {
        DepTree t = build_tree(dep_head);
        return prune(t, sdp(t, to_span(head), to_span(tail)), k);
      },
      py::arg("dep_head"), py::arg("head"), py::arg("tail"), py::arg("k"));

  m.def("task_names", [] {
    std::vector<std::string> out;
    for (TaskId t : kAllTasks) out.emplace_back(task_name(t));
    return out;
  });
  m.def("quantile_bins", [](const std::vector<long>& values, int n) { return quantile_bins(values, n).boundaries; });

  py::class_<ProbingDataset>(m, "ProbingDataset")
      .def_property_readonly("task", [](const ProbingDataset& d) { return std::string(task_name(d.task)); })
      .def_readonly("labels", &ProbingDataset::labels)
      .def("split", [](const ProbingDataset& d, const std::string& name) {
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& item : d.split(parse_split(name))) out.emplace_back(item.id, item.label);
        return out;
      });
  m.def(
      "build_task",
      [](const std::string& task, const Corpus& c, const std::string& profile) {
        return build_task(parse_task(task), c, parse_bin_profile(profile));
      },
      py::arg("task"), py::arg("corpus"), py::arg("profile") = "tacred");

  m.def(
      "micro_f1",
      [](const std::vector<std::string>& preds, const std::vector<std::string>& golds,
         std::optional<std::string> negative_label) { return prf(micro_f1(preds, golds, negative_label)); },
      py::arg("preds"), py::arg("golds"), py::arg("negative_label") = py::none());
  m.def("macro_f1_directional", [](const std::vector<std::string>& preds, const std::vector<std::string>& golds) {
    return prf(macro_f1_directional(preds, golds));
  });

  py::class_<RepMatrix>(m, "RepMatrix")
      .def(py::init(&from_array), py::arg("ids"), py::arg("array"))
      .def_property_readonly("ids", &RepMatrix::ids)
      .def_property_readonly("dim", &RepMatrix::dim)
      .def("__len__", &RepMatrix::rows)
      .def("to_numpy", &as_array)
      .def("hash", &reps_hash)
      .def("save", [](const RepMatrix& r, const std::filesystem::path& p) { write_reps(r, p); });
  m.def("load_reps", [](const std::filesystem::path& p) { return read_reps(p); });

  m.def(
      "baseline_reps",
      [](const std::string& kind, const Corpus& c, const std::string& split, const std::optional<std::filesystem::path>& embeddings,
         size_t dim) {
        std::optional<EmbeddingTable> table;
        if (embeddings) table = load_embeddings(*embeddings, dim);
        return baseline_reps(parse_baseline(kind), select_split(c, split_arg(split)), table ? &*table : nullptr);
      },
      py::arg("kind"), py::arg("corpus"), py::arg("split") = "all", py::arg("embeddings") = py::none(),
      py::arg("dim") = 0);

  py::class_<ProbeResult>(m, "ProbeResult")
      .def_readonly("source", &ProbeResult::source)
      .def_property_readonly("task", [](const ProbeResult& r) { return std::string(task_name(r.task)); })
      .def_readonly("chosen_l2", &ProbeResult::chosen_l2)
      .def_readonly("val_accuracy", &ProbeResult::val_accuracy)
      .def_readonly("test_accuracy", &ProbeResult::test_accuracy)
      .def_readonly("grid_val_accuracy", &ProbeResult::grid_val_accuracy);
  m.def(
      "train_probe",
      [](const RepMatrix& reps, const ProbingDataset& task, std::optional<std::vector<double>> grid, bool standardize,
         double lr, int max_epochs) {
        ProbeOptions o;
        if (grid) o.grid = *grid;
        o.standardize = standardize;
        o.lr = lr;
        o.max_epochs = max_epochs;
        py::gil_scoped_release release;
        return train_probe(reps, task, o);
      },
      py::arg("reps"), py::arg("task"), py::arg("grid") = py::none(), py::arg("standardize") = false,
      py::arg("lr") = ProbeOptions{}.lr, py::arg("max_epochs") = ProbeOptions{}.max_epochs);

  py::class_<EncoderModel<float>>(m, "Model")
      .def_property_readonly("labels", &EncoderModel<float>::labels)
      .def_property_readonly("rep_dim", &EncoderModel<float>::rep_dim)
      .def_property_readonly("encoder",
                             [](const EncoderModel<float>& mo) { return std::string(encoder_kind_name(mo.encoder_config().kind)); })
      .def("represent", [](EncoderModel<float>& mo, const Sentence& s) { return mo.represent(s); })
      .def("predict", [](EncoderModel<float>& mo, const std::vector<Sentence>& s) { return predict(mo, s); })
      .def(
          "extract",
          [](EncoderModel<float>& mo, const Corpus& c, const std::string& split, size_t jobs) {
            py::gil_scoped_release release;
            return extract_reps(mo, select_split(c, split_arg(split)), nullptr, jobs);
          },
          py::arg("corpus"), py::arg("split") = "all", py::arg("jobs") = 1)
      .def("save", [](const EncoderModel<float>& mo, const std::filesystem::path& p) { save_model(mo, p); });
  m.def("load_model", [](const std::filesystem::path& p) { return load_model(p); });

  m.def(
      "train",
      [](const Corpus& c, const std::string& encoder, const std::string& preset_name, std::optional<int> epochs,
         std::uint64_t seed, bool masking, std::optional<double> early_stop, bool validate_on_train) {
        HyperProfile p = preset(preset_name, parse_encoder_kind(encoder));
        if (epochs) p.epochs = *epochs;
        p.input.masking = masking;
        TrainOptions o;
        o.seed = seed;
        o.early_stop_f1 = early_stop;
        o.validate_on_train = validate_on_train;
        TrainResult r = [&] {
          py::gil_scoped_release release;
          return train_re(c, p, o);
        }();
        py::list history;
        for (const auto& e : r.history) {
          py::dict d;
          d["epoch"] = e.epoch;
          d["loss"] = e.loss;
          d["val_f1"] = e.val_f1;
          d["lr"] = e.lr;
          history.append(d);
        }
        return py::make_tuple(std::move(r.model), history, r.best_epoch, r.best_val_f1);
      },
      py::arg("corpus"), py::arg("encoder") = "cnn", py::arg("preset") = "desk-small", py::arg("epochs") = py::none(),
      py::arg("seed") = 0, py::arg("masking") = false, py::arg("early_stop") = py::none(),
      py::arg("validate_on_train") = false);

  m.def("gradcheck", [](std::uint64_t seed) {
    auto cases = gradcheck_ops(seed);
    auto enc = gradcheck_encoders(seed);
    cases.insert(cases.end(), enc.begin(), enc.end());
    std::vector<std::pair<std::string, double>> out;
    for (const auto& c : cases) out.emplace_back(c.name, c.max_rel_error);
    return out;
  }, py::arg("seed") = 7);

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "relprobe");
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
