// Command-line entry point: gen, train, eval, ablate, explain, gradcheck.
//
// Every failure prints one line "error: <command>: <message>" to stderr and
// exits with status 1. Outputs are written to a temporary name and renamed,
// so a failed run never leaves a partial report behind.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dca/checkpoint.hpp"
#include "dca/config.hpp"
#include "dca/data.hpp"
#include "dca/explain.hpp"
#include "dca/training.hpp"
#include "dca/verify.hpp"

namespace fs = std::filesystem;
using namespace dca;

namespace {

struct Options {
  std::string config;
  std::string checkpoint;
  std::string image;
  std::string out;
  std::optional<std::uint64_t> seed;
};

RunConfig resolve_config(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.config.empty()) c.validate();
  if (o.seed) c.seed = *o.seed;
  if (!o.out.empty()) c.output_dir = o.out;
  return c;
}

fs::path ensure_dir(const std::string& dir) {
  fs::create_directories(dir);
  return dir;
}

LabeledImages load_corpus(const std::string& root, const ClaheConfig& clahe_config, std::size_t side) {
  const DatasetListing listing = load_dataset(root);
  for (const auto& w : listing.warnings) std::cerr << "warning: " << w << '\n';
  if (listing.samples.empty()) throw std::runtime_error("dataset " + root + " contains no images");
  LabeledImages data;
  for (const auto& s : listing.samples) {
    data.images.push_back(preprocess(load_image(s.path), clahe_config, side));
    data.labels.push_back(s.label);
  }
  return data;
}

TrainConfig train_config(const RunConfig& c) { return {c.epochs, c.batch_size, c.optimizer}; }

std::string fold_line(const FoldResult& r) {
  return "fold " + std::to_string(r.fold + 1) + ": accuracy " + format_number(r.metrics.accuracy) + " kappa " +
         format_number(r.metrics.kappa);
}

void cmd_gen(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) c.synthetic.seed = *o.seed;
  const std::string dir = o.out.empty() ? c.data_dir : o.out;
  const auto rows = generate_synthetic(c.synthetic, dir);
  std::cout << "wrote " << rows.size() << " images and manifest.csv to " << dir << '\n';
}

void cmd_train(const Options& o) {
  const RunConfig c = resolve_config(o);
  const LabeledImages data = load_corpus(c.data_dir, c.clahe, c.model.backbone.input_size);
  const fs::path out = ensure_dir(c.output_dir);
  const EvalReport report = cross_validate(c.model, train_config(c), data, c.k_folds, c.seed, eval_threads_from_env(),
                                           [&](const FoldResult& r, DcaModel& model) {
                                             save_checkpoint(out / ("fold_" + std::to_string(r.fold + 1) + ".dcam"), model);
                                             std::cout << fold_line(r) << '\n';
                                           });
  write_file_atomic(out / "config.json", to_json(c).dump(2) + "\n");
  write_file_atomic(out / "report.csv", format_report_csv(report));
  std::cout << "wrote " << (out / "report.csv").string() << '\n';
}

void cmd_eval(const Options& o) {
  if (o.checkpoint.empty()) throw std::invalid_argument("--checkpoint is required");
  const RunConfig c = resolve_config(o);
  const DcaModel model = load_checkpoint(o.checkpoint);
  const LabeledImages data = load_corpus(c.data_dir, c.clahe, model.config().backbone.input_size);
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  const Metrics m = metrics(evaluate(model, data, all, eval_threads_from_env()));
  for (const auto& w : m.warnings) std::cerr << "warning: " << w << '\n';
  const fs::path out = ensure_dir(c.output_dir);
  write_file_atomic(out / "eval.csv", format_report_csv(EvalReport{{m}}));
  std::cout << "accuracy " << format_number(m.accuracy) << " kappa " << format_number(m.kappa) << '\n';
}

void cmd_ablate(const Options& o) {
  const RunConfig c = resolve_config(o);
  const LabeledImages data = load_corpus(c.data_dir, c.clahe, c.model.backbone.input_size);
  std::vector<std::pair<AblationRow, EvalReport>> rows;
  for (const auto& row : kAblationRows) {
    std::cout << "variant " << row.name << '\n';
    rows.emplace_back(row, cross_validate(with_branches(c.model, row), train_config(c), data, c.k_folds, c.seed,
                                          eval_threads_from_env(),
                                          [](const FoldResult& r, DcaModel&) { std::cout << "  " << fold_line(r) << '\n'; }));
  }
  const fs::path out = ensure_dir(c.output_dir);
  write_file_atomic(out / "ablation.csv", format_ablation_csv(rows));
  std::cout << "wrote " << (out / "ablation.csv").string() << '\n';
}

void cmd_explain(const Options& o) {
  if (o.checkpoint.empty()) throw std::invalid_argument("--checkpoint is required");
  if (o.image.empty()) throw std::invalid_argument("--image is required");
  const RunConfig c = resolve_config(o);
  DcaModel model = load_checkpoint(o.checkpoint);
  const std::size_t side = model.config().backbone.input_size;
  const Image original = load_image(o.image);
  const Image input = preprocess(original, c.clahe, side);
  const Image base = resize_bilinear(original, side);
  const Tensor x = to_tensor({&input});

  const ForwardResult r = model.infer(x);
  std::vector<Heatmap> maps = gradcam_pp(model, x, {kAbnormal});
  for (auto& m : attention_heatmaps(r.maps, 0, side)) maps.push_back(std::move(m));

  const fs::path out = ensure_dir(c.output_dir);
  const std::string stem = fs::path(o.image).stem().string();
  for (const auto& m : maps) {
    const std::string tag = m.source == "gradcam++" ? "gradcam" : m.source;
    export_heatmap(m, base, out / (stem + "_" + tag));
    if (m.degenerate) std::cerr << "warning: " << m.source << " map carries no signal\n";
  }
  std::cout << "p(abnormal) " << format_number(r.probabilities[static_cast<std::size_t>(kAbnormal)]) << "; wrote "
            << maps.size() << " heatmaps to " << out.string() << '\n';
}

int cmd_gradcheck(const Options& o) {
  const RunConfig c = resolve_config(o);
  ModelConfig m = c.model;
  // Smallest input of at least 16 px that the backbone strides divide.
  const std::size_t stride = m.backbone.total_stride();
  m.backbone.input_size = ((16 + stride - 1) / stride) * stride;
  const ModelGradCheck check = model_grad_check(m, c.seed);
  std::cout << check.report << "relu margin " << check.relu_margin << '\n';
  return check.report.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic contextual attention: data generation, training, evaluation and explanation"};
  app.require_subcommand(1);
  Options o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "seed override");
    return sub;
  };
  auto* gen = add_common(app.add_subcommand("gen", "write a synthetic endoscopy-like corpus"));
  auto* train = add_common(app.add_subcommand("train", "k-fold cross-validated training"));
  auto* eval = add_common(app.add_subcommand("eval", "score a checkpoint on the configured dataset"));
  eval->add_option("--checkpoint", o.checkpoint, "model checkpoint")->required();
  auto* ablate = add_common(app.add_subcommand("ablate", "cross-validate the three attention variants"));
  auto* explain = add_common(app.add_subcommand("explain", "export GradCAM++ and attention heatmaps for one image"));
  explain->add_option("--checkpoint", o.checkpoint, "model checkpoint")->required();
  explain->add_option("--image", o.image, "PPM image")->required();
  auto* gradcheck = add_common(app.add_subcommand("gradcheck", "full-model finite-difference gradient check"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const auto subs = app.get_subcommands();
    std::cerr << "error: " << (subs.empty() ? std::string("usage") : subs.front()->get_name()) << ": " << e.what() << '\n';
    return 2;
  }

  const CLI::App* chosen = app.get_subcommands().front();
  try {
    if (chosen == gen) cmd_gen(o);
    if (chosen == train) cmd_train(o);
    if (chosen == eval) cmd_eval(o);
    if (chosen == ablate) cmd_ablate(o);
    if (chosen == explain) cmd_explain(o);
    if (chosen == gradcheck) return cmd_gradcheck(o);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "error: " << chosen->get_name() << ": " << msg << '\n';
    return 1;
  }
  return 0;
}
