// fewshot: validate | sample | run | report

#include <CLI11.hpp>

#include <iostream>

#include "fewshot/cli.hpp"

using namespace fewshot;

namespace {

int code(ExitCode c) { return static_cast<int>(c); }

template <class Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return code(ExitCode::kValidation);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return code(ExitCode::kNumeric);
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return code(ExitCode::kIo);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return code(ExitCode::kIo);
  }
}

void add_shape(CLI::App* cmd, EvalShape& shape) {
  cmd->add_option("--ways", shape.ways, "Fixed way (default: variable)");
  cmd->add_option("--shots", shape.shots, "Fixed shots per class; needs --query");
  cmd->add_option("--query", shape.query, "Fixed queries per class; needs --shots");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot episode sampling, training and evaluation"};
  app.set_version_flag("--version", std::string(cli::kToolVersion));
  app.require_subcommand(1);

  cli::ValidateOptions vopt;
  auto* validate = app.add_subcommand("validate", "Check a dataset manifest; exit 0 iff clean");
  validate->add_option("--catalog", vopt.catalog, "Manifest file")->required();
  validate->add_option("--out", vopt.out, "Report file (default: stdout)");

  cli::SampleOptions sopt;
  std::string split = "train";
  auto* sample = app.add_subcommand("sample", "Write an episode stream (JSON lines)");
  sample->add_option("--catalog", sopt.catalog, "Manifest file")->required();
  sample->add_option("--split", split, "train, valid or test")->capture_default_str();
  sample->add_option("--seed", sopt.seed, "Base seed")->required();
  sample->add_option("--episodes", sopt.episodes, "Episode count")->required();
  sample->add_option("--out", sopt.out, "Output file")->required();
  sample->add_option("--threads", sopt.threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  add_shape(sample, sopt.shape);

  cli::RunOptions ropt;
  auto* run = app.add_subcommand("run", "Train a learner and evaluate it on every test source");
  run->add_option("--config", ropt.config, "Experiment config file")->required();
  run->add_option("--seed", ropt.seed, "Base seed")->required();
  run->add_option("--out", ropt.out_dir, "Output directory")->required();
  run->add_option("--episodes", ropt.episodes, "Test episodes per source (overrides the config)");
  run->add_option("--threads", ropt.threads, "Worker threads (overrides the config)")->check(CLI::PositiveNumber);

  cli::ReportOptions popt;
  std::string mode, axis = "way";
  auto* report = app.add_subcommand("report", "Rank tables, binned curves and train-source deltas as CSV");
  report->add_option("--mode", mode, "rank, bins, finegrain or trainsource_delta")->required();
  report->add_option("--out", popt.out, "Output CSV")->required();
  report->add_option("--axis", axis, "bins mode: way or shot")->capture_default_str();
  report->add_option("--method", popt.method, "bins and finegrain modes: method to report");
  report->add_option("inputs", popt.inputs, "Result JSONL or cells CSV files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : code(ExitCode::kValidation);
  }

  if (*validate) {
    return guarded([&] {
      const auto o = cli::validate_catalog(vopt);
      if (vopt.out) {
        cli::write_file(*vopt.out, o.report);
        cli::write_manifest(o.manifest, *vopt.out + ".manifest.json");
      } else {
        std::cout << o.report;
      }
      if (!o.clean) {
        std::cerr << "validation failed: " << vopt.catalog << "\n";
        return code(ExitCode::kValidation);
      }
      return code(ExitCode::kOk);
    });
  }
  if (*sample) {
    return guarded([&] {
      const auto s = parse_split(split);
      if (!s || *s == Split::kUnassigned) throw ValidationError("--split must be train, valid or test");
      sopt.split = *s;
      cli::cmd_sample(sopt);
      return code(ExitCode::kOk);
    });
  }
  if (*run) {
    return guarded([&] {
      const auto sum = cli::cmd_run(ropt);
      for (const auto& c : sum.cells)
        std::cout << c.method << " " << c.dataset << " " << format_fixed(c.cell.mean, 2) << " +- "
                  << format_fixed(c.cell.ci, 2) << "\n";
      return code(ExitCode::kOk);
    });
  }
  return guarded([&] {
    popt.mode = cli::parse_report_mode(mode);
    popt.axis = parse_bin_axis(axis);
    if (popt.axis == BinAxis::kLcaHeight && popt.mode == cli::ReportMode::kBins)
      throw ValidationError("use --mode finegrain for lca_height curves");
    cli::cmd_report(popt);
    return code(ExitCode::kOk);
  });
}
