// kzr: synthesize data, train, evaluate and inspect attention models.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "kzr/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Attention-based recognizer for multi-column vertical documents"};
  app.require_subcommand(1);
  app.footer("Log verbosity: KZR_LOG=quiet|info|debug (default info).");

  kzr::SynthOptions synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic dataset");
  s->add_option("--spec", synth.spec_file, "Generator settings (key = value)")->check(CLI::ExistingFile);
  s->add_option("--count", synth.count, "Number of documents")->capture_default_str();
  s->add_option("--out", synth.out_dir, "Output directory")->required();
  s->add_option("--seed", synth.seed, "Random seed")->capture_default_str();

  kzr::TrainOptions train;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--data", train.data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  t->add_option("--config", train.config_file, "Run configuration (key = value)")->check(CLI::ExistingFile);
  t->add_option("--out", train.out_checkpoint, "Checkpoint to write")->required();
  t->add_option("--resume", train.resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  t->add_option("--log", train.log_csv, "Per-epoch CSV log (default: <out>.csv)");

  kzr::EvalOptions eval;
  auto* e = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
  e->add_option("--data", eval.data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--checkpoint", eval.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  e->add_option("--split", eval.split, "train | validation | test | all")
      ->capture_default_str()
      ->check(CLI::IsMember({"train", "validation", "test", "all"}));
  e->add_option("--json", eval.json_out, "Also write the report as JSON");

  kzr::RecognizeOptions rec;
  auto* r = app.add_subcommand("recognize", "Transcribe one image");
  r->add_option("image", rec.image, "Binary PGM image")->required()->check(CLI::ExistingFile);
  r->add_option("--checkpoint", rec.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  r->add_option("--trace", rec.trace_dir, "Write one attention heatmap per step here");

  kzr::SweepOptions sweep;
  auto* w = app.add_subcommand("sweep", "Train and score a grid of growth rates and depths");
  w->add_option("--data", sweep.data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  w->add_option("--grid", sweep.grid, "Comma-separated KxD list")->capture_default_str();
  w->add_option("--config", sweep.config_file, "Base run configuration")->check(CLI::ExistingFile);
  w->add_option("--out", sweep.out_csv, "Also write the table here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& help) {
    return app.exit(help);
  } catch (const CLI::CallForAllHelp& help) {
    return app.exit(help);
  } catch (const CLI::ParseError& err) {
    std::cerr << "kzr: error: " << err.what() << '\n';
    return 2;
  }

  const kzr::Logger log;
  try {
    if (*s) kzr::cmd_synth(synth, log);
    if (*t) kzr::cmd_train(train, log);
    if (*e) kzr::cmd_eval(eval, std::cout, log);
    if (*r) kzr::cmd_recognize(rec, std::cout, log);
    if (*w) kzr::cmd_sweep(sweep, std::cout, log);
  } catch (const std::exception& ex) {
    std::string msg = ex.what();
    for (auto& c : msg)
      if (c == '\n') c = ' ';
    std::cerr << "kzr: error: " << msg << '\n';
    return 1;
  }
  return 0;
}
