#include <filesystem>
#include <algorithm>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "kzr/commands.hpp"

using namespace kzr;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() /
            (std::string("kzr_cmd_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void write_file(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

const char* kSmallSpec =
    "canvas_height = 48\ncanvas_width = 32\nglyph_size = 10\njitter = 1\nnum_classes = 4\n";

const char* kTinyConfig =
    "encoder.growth_rate = 2\nencoder.block_depth = 1\nencoder.initial_channels = 4\n"
    "decoder.hidden_size = 8\ndecoder.embed_size = 8\ndecoder.attention_size = 8\n"
    "decoder.max_decode_len = 10\ntrain.batch_size = 4\nprecision = f64\n";

struct Workspace {
  TempDir dir;
  fs::path data, config;
  std::ostringstream sink;
  Logger log{LogLevel::kQuiet, sink};

  Workspace(std::size_t count, const std::string& extra_config) {
    data = dir.path() / "data";
    config = dir.path() / "run.cfg";
    write_file(dir.path() / "spec.cfg", kSmallSpec);
    write_file(config, std::string(kTinyConfig) + extra_config);
    cmd_synth({(dir.path() / "spec.cfg").string(), count, data, 5}, log);
  }
};

}  // namespace

TEST(Synth, ZeroCountGivesEmptyValidDataset) {
  TempDir dir;
  std::ostringstream sink;
  const Logger log(LogLevel::kQuiet, sink);
  cmd_synth({"", 0, dir.path() / "d", 1}, log);
  EXPECT_EQ(slurp(dir.path() / "d/labels.tsv"), "");
  auto data = load_data_dir(dir.path() / "d", 1, log);
  EXPECT_TRUE(data.all.empty());
  EXPECT_TRUE(data.manifest.train.empty());
  EXPECT_EQ(data.vocab.size(), 12u);
}

TEST(Synth, SameSeedWritesIdenticalBytes) {
  TempDir dir;
  std::ostringstream sink;
  const Logger log(LogLevel::kQuiet, sink);
  cmd_synth({"", 6, dir.path() / "a", 3}, log);
  cmd_synth({"", 6, dir.path() / "b", 3}, log);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir.path() / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir.path() / "a");
    EXPECT_EQ(slurp(e.path()), slurp(dir.path() / "b" / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 6u + 4u);
}

TEST(Synth, PlacementsFileRoundTrips) {
  TempDir dir;
  SynthSpec spec;
  auto docs = generate_corpus(spec, 3, 8);
  write_placements(dir.path() / "p.tsv", docs, spec.vocabulary());
  auto back = read_placements(dir.path() / "p.tsv", spec.vocabulary());
  ASSERT_EQ(back.size(), 3u);
  for (const auto& d : docs) EXPECT_EQ(back.at(d.sample.id), d.placements);
  EXPECT_EQ(lines_of(slurp(dir.path() / "p.tsv"))[0], "id\tindex\ttoken\tcolumn\trow\tx0\ty0\tx1\ty1");
}

TEST(Train, ZeroEpochsWritesInitialCheckpoint) {
  Workspace ws(20, "train.max_epochs = 0\n");
  const fs::path ckpt = ws.dir.path() / "m.ckpt";
  cmd_train({ws.data, ws.config.string(), ckpt, {}, {}}, ws.log);
  const auto c = load_checkpoint<double>(ckpt);
  EXPECT_EQ(c.epoch, 0u);
  EXPECT_FALSE(c.best_val_ser.has_value());
  const RunConfig rc = load_run_config(ws.config.string());
  Model<double> fresh(rc.encoder, rc.decoder, Vocabulary::load((ws.data / "vocab.txt").string()),
                      rc.train.seed);
  ASSERT_EQ(c.params.size(), fresh.params().size());
  for (std::size_t i = 0; i < c.params.size(); ++i)
    EXPECT_TRUE(std::ranges::equal(c.params[i].data, fresh.params()[i].data())) << c.params[i].name;
  EXPECT_EQ(slurp(ckpt.string() + ".csv"), "epoch,train_loss,val_cer,val_ser,improved,seconds\n");
}

TEST(Train, ResumeContinuesEpochCounterAndLog) {
  Workspace ws(20, "train.max_epochs = 1\n");
  const fs::path ckpt = ws.dir.path() / "m.ckpt";
  cmd_train({ws.data, ws.config.string(), ckpt, {}, {}}, ws.log);
  EXPECT_EQ(load_checkpoint<double>(ckpt).epoch, 1u);
  cmd_train({ws.data, ws.config.string(), ckpt, ckpt, {}}, ws.log);
  const auto rows = lines_of(slurp(ckpt.string() + ".csv"));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1].substr(0, 2), "1,");
  EXPECT_EQ(rows[2].substr(0, 2), "2,");
}

TEST(Train, ResumeRejectsForeignVocabulary) {
  Workspace ws(20, "train.max_epochs = 0\n");
  const fs::path ckpt = ws.dir.path() / "m.ckpt";
  cmd_train({ws.data, ws.config.string(), ckpt, {}, {}}, ws.log);
  Vocabulary({"x", "y"}).save((ws.data / "vocab.txt").string());
  EXPECT_THROW(cmd_train({ws.data, ws.config.string(), ckpt, ckpt, {}}, ws.log), std::runtime_error);
}

TEST(Eval, EmptySplitIsAnError) {
  Workspace ws(20, "train.max_epochs = 0\n");
  const fs::path ckpt = ws.dir.path() / "m.ckpt";
  cmd_train({ws.data, ws.config.string(), ckpt, {}, {}}, ws.log);
  std::ostringstream out;
  EvalOptions opt{ws.data, ckpt, "test", {}};
  EXPECT_THROW(cmd_eval(opt, out, ws.log), DatasetError);
}

TEST(Eval, TextAndJsonReportsAgree) {
  Workspace ws(20, "train.max_epochs = 0\n");
  const fs::path ckpt = ws.dir.path() / "m.ckpt";
  cmd_train({ws.data, ws.config.string(), ckpt, {}, {}}, ws.log);
  std::ostringstream out;
  const fs::path json = ws.dir.path() / "r.json";
  const EvalReport r = cmd_eval({ws.data, ckpt, "validation", json}, out, ws.log);
  EXPECT_EQ(out.str(), r.to_text());
  EXPECT_EQ(EvalReport::from_json(nlohmann::json::parse(slurp(json))), r);
  EXPECT_EQ(r.num_sequences, 2u);
  EXPECT_EQ(r.total_target_tokens, 12u);
}

TEST(EvalReport, FixedTextAndJsonLayout) {
  const EvalReport r = evaluate({{{2, 3, 4}, {2, 3, 4}}, {{5, 6, 7}, {5, 2, 7}}});
  EXPECT_EQ(r.to_text(),
            "cer=0.16666666666666666\nser=0.5\ntotal_target_tokens=6\nnum_sequences=2\n"
            "exact_matches=1\n");
  const auto j = r.to_json();
  EXPECT_EQ(j.at("total_target_tokens"), 6);
  EXPECT_EQ(j.at("num_sequences"), 2);
  EXPECT_EQ(j.at("edit_distances"), nlohmann::json::array({0, 1}));
  EXPECT_DOUBLE_EQ(j.at("ser").get<double>(), 0.5);
}

TEST(Eval, OverfitToyModelScoresPerfectlyOnItsTrainingSet) {
  TempDir dir;
  std::ostringstream sink;
  const Logger log(LogLevel::kQuiet, sink);
  write_file(dir.path() / "spec.cfg",
             "canvas_height = 16\ncanvas_width = 16\nglyph_size = 10\njitter = 0\nnoise = 0\n"
             "num_classes = 3\nlines_min = 1\nlines_max = 1\nchars_min = 1\nchars_max = 1\n");
  cmd_synth({(dir.path() / "spec.cfg").string(), 10, dir.path() / "d", 2}, log);
  write_file(dir.path() / "run.cfg",
             std::string(kTinyConfig) +
                 "train.epsilon = 1e-4\ntrain.max_epochs = 150\ntrain.patience_epochs = 150\n");
  // Validate on the training set itself so the kept checkpoint is the best fit.
  const LoadedData data = load_data_dir(dir.path() / "d", 1, log);
  const RunConfig rc = load_run_config((dir.path() / "run.cfg").string());
  Model<double> model(rc.encoder, rc.decoder, data.vocab, rc.train.seed);
  const auto result = train(model, data.all, data.all, rc);
  const fs::path ckpt = dir.path() / "m.ckpt";
  save_checkpoint(ckpt, result.best);
  std::ostringstream out;
  const EvalReport r = cmd_eval({dir.path() / "d", ckpt, "all", {}}, out, log);
  EXPECT_EQ(r.num_sequences, 10u);
  EXPECT_EQ(r.ser, 0.0);
}

TEST(Heatmap, NearestNeighbourUpsampling) {
  const std::vector<double> alpha = {0.1, 0.3, 0.2, 0.5};
  const auto up = upsample_alpha(alpha, 2, 2, 2, 4, 5);
  ASSERT_EQ(up.size(), 20u);
  const double a = 0.0, b = 0.5, c = 0.25, d = 1.0;
  const std::vector<double> want = {a, a, b, b, b, a, a, b, b, b,
                                    c, c, d, d, d, c, c, d, d, d};
  for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(up[i], want[i], 1e-12) << i;
}

TEST(Heatmap, UniformAlphaGivesUniformOverlay) {
  GrayImage base(16, 8, 0);
  HeatmapFrame f{base, upsample_alpha(std::vector<double>(2, 0.5), 2, 1, 8, 16, 8), 1, "<E>"};
  const RgbImage img = render_frame(f);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_EQ(img.pixels[i], 255);
  f.base.at(3, 3) = 255;
  EXPECT_EQ(render_frame(f).at(3, 3)[0], 0);
}

TEST(Heatmap, PeakIsRedAndInkStaysDark) {
  GrayImage base(2, 2, 0);
  base.at(1, 1) = 255;
  const HeatmapFrame f{base, {0.0, 1.0, 0.0, 0.5}, 1, "x"};
  const RgbImage img = render_frame(f);
  EXPECT_EQ(img.at(0, 0)[0], 255);
  EXPECT_EQ(img.at(0, 0)[1], 255);
  EXPECT_EQ(img.at(0, 1)[0], 255);
  EXPECT_EQ(img.at(0, 1)[1], 0);
  EXPECT_EQ(img.at(1, 1)[0], 128);
  EXPECT_EQ(img.at(1, 1)[2], 0);
  EXPECT_EQ(img.height, base.height);
  EXPECT_EQ(img.width, base.width);
}

TEST(Recognize, OneFramePerStepIncludingEnd) {
  Workspace ws(20, "train.max_epochs = 1\n");
  const fs::path ckpt = ws.dir.path() / "m.ckpt";
  cmd_train({ws.data, ws.config.string(), ckpt, {}, {}}, ws.log);
  const fs::path image = ws.data / "images/doc000000.pgm";
  std::ostringstream out;
  const Recognition rec = cmd_recognize({image, ckpt, ws.dir.path() / "t1"}, out, ws.log);
  EXPECT_EQ(out.str(), rec.text + "\n");
  const auto index = lines_of(slurp(ws.dir.path() / "t1/frames.tsv"));
  if (rec.tokens.size() < 10) {
    EXPECT_EQ(rec.frames_written, rec.tokens.size() + 1);
    EXPECT_EQ(index.back().substr(index.back().find('\t') + 1, 3), "<E>");
  } else {
    EXPECT_EQ(rec.frames_written, 10u);
  }
  EXPECT_EQ(index.size(), rec.frames_written + 1);
  const std::string first = slurp(ws.dir.path() / "t1/step_001.ppm");
  EXPECT_EQ(first.substr(0, 12), "P6\n32 48\n255");
  EXPECT_EQ(first.size(), 13u + 48 * 32 * 3);

  cmd_recognize({image, ckpt, ws.dir.path() / "t2"}, out, ws.log);
  for (const auto& e : fs::directory_iterator(ws.dir.path() / "t1"))
    EXPECT_EQ(slurp(e.path()), slurp(ws.dir.path() / "t2" / e.path().filename()));
}

TEST(Recognize, PadsOddSizedImagesWithANote) {
  Workspace ws(20, "train.max_epochs = 0\n");
  const fs::path ckpt = ws.dir.path() / "m.ckpt";
  cmd_train({ws.data, ws.config.string(), ckpt, {}, {}}, ws.log);
  write_pgm((ws.dir.path() / "odd.pgm").string(), GrayImage(45, 30, 0));
  std::ostringstream out, err;
  const Logger log(LogLevel::kQuiet, err);
  const Recognition rec = cmd_recognize({ws.dir.path() / "odd.pgm", ckpt, {}}, out, log);
  EXPECT_TRUE(rec.padded);
  EXPECT_NE(err.str().find("padded 45x30 image to 48x32"), std::string::npos);
}

TEST(Sweep, GridParsing) {
  const auto g = parse_grid("8x4, 16x4");
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[1].growth_rate, 16u);
  EXPECT_EQ(g[1].block_depth, 4u);
  for (const char* bad : {"", "8", "8x", "x4", "8x4x2", "0x4", "8y4", "8x4,"})
    EXPECT_THROW(parse_grid(bad), std::invalid_argument) << bad;
}

TEST(Sweep, RowsSortByCerAndKeepGridOrderOnTies) {
  std::vector<SweepRow> rows = {{16, 16, 0, 0, 0, 0.3, 0.5},
                                {24, 16, 0, 0, 0, 0.1, 0.2},
                                {16, 8, 0, 0, 0, 0.3, 0.4},
                                {24, 8, 0, 0, 0, 0.2, 0.2}};
  sort_sweep(rows);
  EXPECT_EQ(rows[0].growth_rate, 24u);
  EXPECT_EQ(rows[0].block_depth, 16u);
  EXPECT_EQ(rows[1].block_depth, 8u);
  EXPECT_EQ(rows[2].block_depth, 16u);
  EXPECT_EQ(rows[3].block_depth, 8u);
}

TEST(Sweep, CsvLayout) {
  std::ostringstream out;
  write_sweep_csv(out, {{8, 4, 60, 1234, 3, 0.25, 0.5}});
  EXPECT_EQ(out.str(),
            "growth_rate,block_depth,feature_channels,parameters,epochs,cer,ser\n"
            "8,4,60,1234,3,0.25,0.5\n");
}

TEST(Sweep, GridOfOneGivesOneRow) {
  Workspace ws(20, "train.max_epochs = 1\n");
  std::ostringstream out;
  const fs::path csv = ws.dir.path() / "sweep.csv";
  const auto rows = cmd_sweep({ws.data, "2x1", ws.config.string(), csv}, out, ws.log);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].growth_rate, 2u);
  EXPECT_EQ(rows[0].epochs, 1u);
  EXPECT_EQ(lines_of(out.str()).size(), 2u);
  EXPECT_EQ(slurp(csv), out.str());
}
