#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "xrecap/config.hpp"
#include "xrecap/eval.hpp"
#include "xrecap/manifest.hpp"
#include "xrecap/pipeline.hpp"
#include "xrecap/recaption.hpp"
#include "xrecap/refsel.hpp"
#include "xrecap/termlens.hpp"
#include "xrecap/trainer.hpp"

namespace py = pybind11;
using namespace xrecap;

namespace {

EmbeddingStore store_of(const std::vector<std::string>& ids, const Eigen::MatrixXd& rows) {
  if (static_cast<Eigen::Index>(ids.size()) != rows.rows()) {
    throw Error(ErrorClass::validation, "ids and rows differ in length");
  }
  EmbeddingStore store(static_cast<std::size_t>(rows.cols()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Eigen::VectorXd r = rows.row(static_cast<Eigen::Index>(i)).transpose();
    store.add(ids[i], std::span<const double>(r.data(), static_cast<std::size_t>(r.size())));
  }
  return store;
}

py::dict report_dict(const RetrievalReport& r) {
  return py::module_::import("json").attr("loads")(report_to_json(r));
}

}  // namespace

PYBIND11_MODULE(_xrecap, m) {
  m.doc() = "Cross-lingual recaptioning pipeline core";
  m.attr("__version__") = tool_version();

  py::register_exception<Error>(m, "XrecapError");

  m.def("contrastive_loss",
        [](const Eigen::MatrixXd& text, const Eigen::MatrixXd& images, double temperature) {
          auto r = contrastive_loss(text, images, temperature);
          return py::make_tuple(r.loss, r.text_gradient);
        },
        py::arg("text"), py::arg("images"), py::arg("temperature") = 0.07,
        "Symmetric contrastive loss over unit rows and its gradient w.r.t. text.");

  m.def("knn",
        [](const std::vector<std::string>& ids, const Eigen::MatrixXd& rows,
           const std::vector<double>& query, std::size_t k) {
          const auto store = store_of(ids, rows);
          const auto index = NnIndex::build(store, ids);
          std::vector<std::pair<std::string, double>> out;
          for (const auto& n : index.query(std::span<const double>(query), k)) {
            out.emplace_back(n.image_id, n.similarity);
          }
          return out;
        },
        py::arg("ids"), py::arg("rows"), py::arg("query"), py::arg("k"));

  m.def("rank_all",
        [](const std::vector<std::string>& query_ids, const Eigen::MatrixXd& queries,
           const std::vector<std::string>& gallery_ids, const Eigen::MatrixXd& gallery,
           const std::map<std::string, std::string>& gold) {
          const VectorTable q{query_ids, queries};
          const VectorTable g{gallery_ids, gallery};
          const std::map<std::string, std::string, std::less<>> gm(gold.begin(), gold.end());
          std::vector<std::pair<std::string, std::size_t>> out;
          for (const auto& r : rank_all(q, g, gm)) out.emplace_back(r.query_id, r.rank_of_gold);
          return out;
        },
        py::arg("query_ids"), py::arg("queries"), py::arg("gallery_ids"),
        py::arg("gallery"), py::arg("gold"),
        "Rank of the gold gallery item for every query.");

  m.def("mean_recall",
        [](double a, double b, double c, double d, double e, double f) {
          return make_report(a, b, c, d, e, f).mean_recall;
        });

  m.def("rouge",
        [](const std::string& candidate, const std::string& reference,
           const std::string& variant) {
          return rouge(candidate, reference, rouge_variant_from_string(variant));
        },
        py::arg("candidate"), py::arg("reference"), py::arg("variant") = "rougeL");

  m.def("prompt_template",
        [](const std::string& s) {
          return std::string(prompt_template(rewrite_strategy_from_string(s)));
        });
  m.def("render_prompt",
        [](const std::string& strategy, const std::string& input,
           std::optional<std::pair<std::string, std::string>> guidance) {
          const auto s = rewrite_strategy_from_string(strategy);
          if (!guidance) return render_prompt(s, input);
          GuidanceExample g;
          g.input_caption.text = guidance->first;
          g.output_caption.text = guidance->second;
          return render_prompt(s, input, &g);
        },
        py::arg("strategy"), py::arg("input"), py::arg("guidance") = py::none());
  m.def("parse_final", [](const std::string& raw) { return parse_final(raw); });
  m.def("wrap_final", [](const std::string& text) { return wrap_final(text); });

  m.def("supercategory_of",
        [](const std::string& lemma, const std::filesystem::path& edges,
           const std::filesystem::path& lemmas, const std::filesystem::path& supercats) {
          const auto t = Taxonomy::load(edges, lemmas);
          return supercategory_of(lemma, t, SupercategorySet::load(supercats));
        });

  m.def("load_config",
        [](const std::filesystem::path& path) {
          return py::module_::import("json").attr("loads")(load_config(path).canonical_json());
        });

  m.def("run_pipeline",
        [](const std::filesystem::path& config_path,
           std::optional<std::filesystem::path> output_dir) {
          auto config = load_config(config_path);
          if (output_dir) config.output_dir = *output_dir;
          apply_env_overrides(config);
          {
            py::gil_scoped_release release;
            Pipeline(config).run_all();
          }
          py::dict reports;
          for (const auto& v : config.variants) {
            const auto path = Workspace{config.output_dir}.eval_dir(v) / "report.json";
            reports[py::str(v)] = py::module_::import("json").attr("loads")(read_file(path));
          }
          return reports;
        },
        py::arg("config"), py::arg("output_dir") = py::none(),
        "Runs every stage and returns the per-variant report JSON.");

  m.def("verify_manifest", [](const std::filesystem::path& p) { return verify_manifest(p); });
  m.def("recall_report_from_ranks",
        [](const std::vector<std::size_t>& i2t, const std::vector<std::size_t>& t2i) {
          auto to = [](const std::vector<std::size_t>& ranks) {
            std::vector<RankingResult> out;
            for (auto r : ranks) out.push_back({"", {}, r});
            return out;
          };
          return report_dict(recall_report(to(i2t), to(t2i)));
        });
}
