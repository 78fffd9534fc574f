#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "synthetic.hpp"
#include "vtn/model_io.hpp"

using namespace vtn;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(VTN_CLI_PATH) + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  RunResult r;
  if (pipe == nullptr) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof(buf), pipe) != nullptr) r.out += buf;
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::uint8_t> bytes_of(const fs::path& p) { return read_file(p); }

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("vtn_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // t = 4, stride 2: one segment spans 8 rows.
  static DecoderConfig config() { return synthetic::small_model(8, 4, 3); }

  std::string save_random_model(const std::string& name, std::uint64_t seed) {
    auto w = zero_weights<float>(config());
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(-0.8f, 0.8f);
    for (auto& [n, tensor] : w.named_tensors())
      for (auto& v : tensor->data()) v = dist(rng);
    save_model(w, path(name));
    return path(name);
  }

  // Zero weights except the classifier bias: always predicts `cls`.
  std::string save_constant_model(const std::string& name, std::size_t cls) {
    auto w = zero_weights<float>(config());
    w.b_cls(0, cls) = 3.0f;
    save_model(w, path(name));
    return path(name);
  }

  std::string save_table(const std::string& name, EmbeddingTable t) {
    save_embeddings(t, path(name));
    return path(name);
  }

  static EmbeddingTable random_table(std::uint64_t rows, std::uint32_t d, std::uint64_t seed) {
    EmbeddingTable t;
    t.d = d;
    t.rows = rows;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    t.values.resize(rows * d);
    for (auto& v : t.values) v = dist(rng);
    return t;
  }

  fs::path dir_;
};

std::vector<double> segment_probs(const std::string& out) {
  std::vector<double> p;
  for (const auto& l : lines(out)) {
    std::size_t idx, cls;
    double prob;
    if (std::sscanf(l.c_str(), "%zu, %zu, %lf", &idx, &cls, &prob) == 3) p.push_back(prob);
  }
  return p;
}

}  // namespace

TEST_F(CliTest, SingleSegmentVideoMatchesSegment) {
  const auto model = save_random_model("m.vtnm", 1);
  const auto emb = save_table("e.vtne", random_table(8, 8, 2));
  const auto r = run("infer --model " + model + " --embeddings " + emb);
  ASSERT_EQ(r.exit_code, 0);
  const auto l = lines(r.out);
  ASSERT_EQ(l.size(), 2u);
  EXPECT_EQ("video" + l[0].substr(l[0].find(',')), l[1]);
}

TEST_F(CliTest, DuplicatedSegmentGivesIdenticalLines) {
  const auto model = save_random_model("m.vtnm", 3);
  auto t = random_table(16, 8, 4);
  std::copy(t.values.begin(), t.values.begin() + 64, t.values.begin() + 64);
  const auto r = run("infer --model " + model + " --embeddings " + save_table("e.vtne", t));
  ASSERT_EQ(r.exit_code, 0);
  const auto l = lines(r.out);
  ASSERT_EQ(l.size(), 3u);
  EXPECT_EQ(l[0].substr(1), l[1].substr(1));
}

TEST_F(CliTest, PermutingSampledFramesKeepsProbabilities) {
  const auto model = save_random_model("m.vtnm", 5);
  auto t = random_table(8, 8, 6);
  const auto a = run("infer --model " + model + " --embeddings " + save_table("a.vtne", t));
  // Sampled rows are 0, 2, 4, 6; rotate them.
  auto p = t;
  for (std::size_t k = 0; k < 4; ++k) {
    const std::size_t from = 2 * k, to = 2 * ((k + 1) % 4);
    std::copy_n(t.values.begin() + from * 8, 8, p.values.begin() + to * 8);
  }
  const auto b = run("infer --model " + model + " --embeddings " + save_table("b.vtne", p));
  ASSERT_EQ(a.exit_code, 0);
  ASSERT_EQ(b.exit_code, 0);
  const auto pa = segment_probs(a.out), pb = segment_probs(b.out);
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_NEAR(pa[i], pb[i], 1.5e-6);
}

TEST_F(CliTest, InferIsByteIdenticalAcrossRuns) {
  const auto model = save_random_model("m.vtnm", 7);
  const auto emb = save_table("e.vtne", random_table(40, 8, 8));
  const auto a = run("infer --model " + model + " --embeddings " + emb);
  const auto b = run("infer --model " + model + " --embeddings " + emb);
  ASSERT_EQ(a.exit_code, 0);
  EXPECT_EQ(lines(a.out).size(), 6u);  // 5 segments + video
  EXPECT_EQ(a.out, b.out);
  const auto first = run("infer --segments first --model " + model + " --embeddings " + emb);
  EXPECT_EQ(lines(first.out).size(), 2u);
}

TEST_F(CliTest, ExitCodes) {
  const auto model = save_random_model("m.vtnm", 9);
  const auto wide = save_table("wide.vtne", random_table(8, 6, 1));
  EXPECT_EQ(run("infer --model " + model + " --embeddings " + wide).exit_code, 2);
  EXPECT_EQ(run("infer --model " + model).exit_code, 2);
  EXPECT_EQ(run("frobnicate").exit_code, 2);
  EXPECT_EQ(run("infer --model " + path("missing") + " --embeddings " + wide).exit_code, 2);
  auto bytes = bytes_of(model);
  bytes[70] ^= 0x5a;
  write_file_atomic(path("bad.vtnm"), bytes);
  const auto emb = save_table("e.vtne", random_table(8, 8, 1));
  EXPECT_EQ(run("infer --model " + path("bad.vtnm") + " --embeddings " + emb).exit_code, 3);
  const auto short_video = save_table("short.vtne", random_table(5, 8, 1));
  EXPECT_EQ(run("infer --model " + model + " --embeddings " + short_video).exit_code, 3);
  EXPECT_EQ(run("--help").exit_code, 0);
}

TEST_F(CliTest, EvalArithmetic) {
  auto t = random_table(24, 8, 11);
  const auto model = save_constant_model("c.vtnm", 1);
  t.videos = {{0, 8, 1}, {8, 8, 1}, {16, 8, 1}};
  EXPECT_EQ(run("eval --model " + model + " --dataset " + save_table("all.vtne", t)).out,
            "Video@1: 1.0000 (3/3 videos)\n");
  t.videos = {{0, 8, 0}, {8, 8, 2}, {16, 8, 0}};
  EXPECT_EQ(run("eval --model " + model + " --dataset " + save_table("none.vtne", t)).out,
            "Video@1: 0.0000 (0/3 videos)\n");
  t.videos = {{0, 8, 1}, {8, 8, 0}, {16, 8, 1}};
  EXPECT_EQ(run("eval --model " + model + " --dataset " + save_table("mixed.vtne", t)).out,
            "Video@1: 0.6667 (2/3 videos)\n");
  t.videos.clear();
  EXPECT_EQ(run("eval --model " + model + " --dataset " + save_table("unl.vtne", t)).exit_code, 2);
}

TEST_F(CliTest, EvalMatchesRecountFromInfer) {
  const auto model = save_random_model("m.vtnm", 13);
  auto t = random_table(80, 8, 14);
  t.videos = {{0, 16, 0}, {16, 24, 1}, {40, 8, 2}, {48, 32, 1}};
  const auto emb = save_table("e.vtne", t);
  const auto inf = run("infer --model " + model + " --embeddings " + emb);
  std::size_t video = 0, correct = 0;
  for (const auto& l : lines(inf.out)) {
    std::size_t cls;
    if (std::sscanf(l.c_str(), "video, %zu", &cls) == 1) {
      correct += cls == static_cast<std::size_t>(t.videos[video].label);
      ++video;
    }
  }
  ASSERT_EQ(video, 4u);
  char expect[64];
  std::snprintf(expect, sizeof(expect), "Video@1: %.4f (%zu/4 videos)\n", correct / 4.0, correct);
  EXPECT_EQ(run("eval --model " + model + " --dataset " + emb).out, expect);
}

TEST_F(CliTest, TrainAndDistill) {
  std::ofstream(path("run.cfg")) << "seed=0\nlr=0.001\nepochs=4\nbatch=4\nkd.alpha=0\n"
                                    "model.d=8\nmodel.heads=2\nmodel.d_k=4\nmodel.d_v=4\n"
                                    "model.d_ff=16\nmodel.blocks=2\nmodel.t=4\nmodel.classes=3\n"
                                    "model.input_dim=8\n";
  auto t = random_table(64, 8, 21);
  for (std::uint64_t v = 0; v < 8; ++v) t.videos.push_back({v * 8, 8, static_cast<std::int32_t>(v % 3)});
  const auto data = save_table("train.vtne", t);
  const auto teacher = save_random_model("teacher.vtnm", 22);
  const std::string common = "--config " + path("run.cfg") + " --train " + data + " ";

  ASSERT_EQ(run("train " + common + "--out " + path("plain.vtnm") + " --history " + path("h.csv")).exit_code, 0);
  ASSERT_EQ(run("distill " + common + "--teacher " + teacher + " --out " + path("kd0.vtnm")).exit_code, 0);
  EXPECT_EQ(bytes_of(path("plain.vtnm")), bytes_of(path("kd0.vtnm")));
  std::ifstream csv(path("h.csv"));
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "epoch,train_loss,val_loss,val_acc,lr");

  std::ofstream(path("run.cfg"), std::ios::app) << "kd.alpha=0.5\n";
  ASSERT_EQ(run("distill " + common + "--teacher " + teacher + " --out " + path("one.vtnm")).exit_code, 0);
  ASSERT_EQ(run("distill " + common + "--teacher " + teacher + " --teacher " + teacher + " --out " +
                path("two.vtnm")).exit_code, 0);
  const auto one = load_model(path("one.vtnm"));
  const auto two = load_model(path("two.vtnm"));
  const auto a = one.named_tensors();
  const auto b = two.named_tensors();
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a[i].second->size(); ++k)
      EXPECT_NEAR(a[i].second->data()[k], b[i].second->data()[k], 1e-6);

  EXPECT_EQ(run("distill " + common + "--out " + path("x.vtnm")).exit_code, 2);
  EXPECT_EQ(run("train --config " + path("run.cfg") + " --train " + path("missing.vtne") + " --out " +
                path("x.vtnm")).exit_code, 2);
}

TEST_F(CliTest, ParamsAndBench) {
  const auto p = run("params --encoder-params 21.28e6 --encoder-macs 3.6e9");
  ASSERT_EQ(p.exit_code, 0);
  EXPECT_NE(p.out.find("total,7557520,121765888"), std::string::npos);
  EXPECT_NE(p.out.find("(28.84M)"), std::string::npos);
  EXPECT_NE(p.out.find("= 3.722 G"), std::string::npos);
  const auto k = run("params --classes 101");
  EXPECT_NE(k.out.find("classifier,51813,"), std::string::npos);
  EXPECT_NE(k.out.find("total,7404133,"), std::string::npos);

  const auto model = save_random_model("m.vtnm", 1);
  const auto b = run("bench --model " + model + " --repeats 5 --warmup 1");
  ASSERT_EQ(b.exit_code, 0);
  EXPECT_NE(b.out.find("encoder-inclusive reference 3.77 GMAC / 56 FPS"), std::string::npos);
  EXPECT_NE(b.out.find("frames/s"), std::string::npos);
}

TEST_F(CliTest, EmbedWritesToyEncoderTable) {
  FrameSequence f;
  f.num_frames = 10;
  f.height = 16;
  f.width = 16;
  f.pixels.resize(f.frame_size() * 10);
  for (std::size_t i = 0; i < f.pixels.size(); ++i) f.pixels[i] = static_cast<std::uint8_t>(i * 31);
  save_frames(f, path("f.vtnf"));
  ASSERT_EQ(run("embed --frames " + path("f.vtnf") + " --out " + path("s.vtne") +
                " --dim 8 --modality stacked --label 2").exit_code, 0);
  const auto t = load_embeddings(path("s.vtne"));
  EXPECT_EQ(t.d, 16u);
  EXPECT_EQ(t.rows, 10u);
  ASSERT_EQ(t.videos.size(), 1u);
  EXPECT_EQ(t.videos[0].label, 2);
  const ToyEncoder enc(8, 0);
  const auto zero = enc.zero_response();
  // Frames 0 and 1 have no predecessor two frames back: diff half is the zero response.
  for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(t.values[8 + k], zero[k], 1e-6);
}
