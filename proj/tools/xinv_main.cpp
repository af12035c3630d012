// Command-line front end for the experiment pipeline. One subcommand per
// stage plus `run` (everything the config needs) and `make-digits` (emit the
// synthetic corpus as an IDX pair for outside inspection). Domain failures
// land on stderr as one JSON object: {"error": code, "message": ...}.

#include <iostream>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "CLI11.hpp"
#include "json.hpp"
#include "xinv/digits.hpp"
#include "xinv/errors.hpp"
#include "xinv/io.hpp"
#include "xinv/pipeline.hpp"

namespace {

void emit_error(const std::string& code, const std::string& message) {
  nlohmann::json j;
  j["error"] = code;
  j["message"] = message;
  std::cerr << j.dump() << "\n";
}

void write_preview(const std::string& path, const xinv::RawImages& raw) {
  int cols = 10, rows = int(std::min<int64_t>(raw.n, 100) + cols - 1) / cols;
  int h = int(raw.h), w = int(raw.w), gap = 2;
  cv::Mat grid(gap + rows * (h + gap), gap + cols * (w + gap), CV_8UC1, cv::Scalar(0));
  for (int64_t i = 0; i < std::min<int64_t>(raw.n, 100); ++i) {
    cv::Mat tile(h, w, CV_8UC1,
                 const_cast<unsigned char*>(raw.pixels.data() + i * raw.h * raw.w));
    int r = int(i) / cols, c = int(i) % cols;
    tile.copyTo(grid(cv::Rect(gap + c * (w + gap), gap + r * (h + gap), w, h)));
  }
  cv::imwrite(path, grid);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"model-inversion-through-explanations experiment pipeline"};
  app.require_subcommand(1);

  std::string config_path, stage_override, digits_dir;
  long long seed_override = -1;
  long long digit_count = 1000, digit_seed = 1;
  bool quiet = false;

  auto add_common = [&](CLI::App* sc) {
    sc->add_option("--config", config_path, "experiment config file")->required();
    sc->add_option("--seed", seed_override, "override the config's seed key");
    sc->add_flag("--quiet", quiet, "suppress progress lines");
  };

  CLI::App* run = app.add_subcommand("run", "run every stage this config needs, in order");
  add_common(run);
  run->add_option("--stage", stage_override, "run one named stage instead");

  for (const auto& name : xinv::stage_names())
    add_common(app.add_subcommand(name, "run the '" + name + "' stage"));

  CLI::App* digits = app.add_subcommand("make-digits", "write the synthetic corpus as IDX");
  digits->add_option("--out", digits_dir, "output directory")->required();
  digits->add_option("--count", digit_count, "images to render");
  digits->add_option("--seed", digit_seed, "corpus seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit_error("usage", e.what());
    return e.get_exit_code() ? e.get_exit_code() : 1;
  }

  try {
    if (digits->parsed()) {
      xinv::RawImages raw = xinv::make_digit_corpus(digit_count, uint64_t(digit_seed));
      xinv::ensure_dir(digits_dir);
      xinv::write_idx_pair(digits_dir, raw);
      write_preview(digits_dir + "/preview.png", raw);
      if (!quiet)
        std::cout << "wrote " << raw.n << " digits to " << digits_dir << "\n";
      return 0;
    }

    xinv::Config raw = xinv::Config::parse_file(config_path);
    if (seed_override >= 0) raw.set("seed", std::to_string(seed_override));
    xinv::ExperimentConfig cfg = xinv::interpret_config(raw);
    std::ostream* log = quiet ? nullptr : &std::cout;

    if (run->parsed()) {
      if (stage_override.empty())
        xinv::run_all(cfg, log);
      else
        xinv::run_stage(cfg, stage_override, log);
      return 0;
    }
    for (const auto& name : xinv::stage_names())
      if (app.get_subcommand(name)->parsed()) {
        xinv::run_stage(cfg, name, log);
        return 0;
      }
    emit_error("usage", "no subcommand matched");
    return 1;
  } catch (const xinv::Error& e) {
    emit_error(e.code(), e.what());
    return 1;
  } catch (const std::exception& e) {
    emit_error("internal", e.what());
    return 2;
  }
}
