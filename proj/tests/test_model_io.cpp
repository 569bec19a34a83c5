#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "test_util.hpp"

using namespace biofuse;
using testutil::TempDir;

namespace {

EncoderModel trained_looking_model() {
  Rng rng(99);
  EncoderConfig cfg;
  cfg.input_dim = 18;
  cfg.hidden_units = 6;
  auto m = init_encoder(cfg, ModalityKind::Accelerometer, channel_labels(ModalityKind::Accelerometer), rng);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& bn : m.norms) {
    for (Eigen::Index i = 0; i < bn.gamma.size(); ++i) {
      bn.gamma[i] = 1.0 + 0.1 * n(rng);
      bn.running_mean[i] = n(rng) / 3.0;
      bn.running_var[i] = 0.7 + 0.1 * std::abs(n(rng));
    }
  }
  return m;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ErrorCode load_code(const std::filesystem::path& p) {
  try {
    load_model(p);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST(ModelIo, RoundTripIsBitExact) {
  TempDir dir("model");
  auto m = trained_looking_model();
  save_model(m, dir.path() / "m.json");
  auto back = load_model(dir.path() / "m.json");
  EXPECT_EQ(back.config, m.config);
  EXPECT_EQ(back.modality, m.modality);
  EXPECT_EQ(back.channels, m.channels);
  ASSERT_EQ(back.layers.size(), m.layers.size());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    EXPECT_TRUE(back.layers[l].W == m.layers[l].W);
    EXPECT_TRUE(back.layers[l].U == m.layers[l].U);
    EXPECT_TRUE(back.layers[l].b == m.layers[l].b);
  }
  EXPECT_TRUE(back.norms[0].running_var == m.norms[0].running_var);

  Eigen::MatrixXd w = Eigen::MatrixXd::Random(150, 18);
  EXPECT_TRUE(embed(m, w) == embed(back, w));
}

TEST(ModelIo, TruncatedFileIsCorrupt) {
  TempDir dir("trunc");
  save_model(trained_looking_model(), dir.path() / "m.json");
  const auto text = slurp(dir.path() / "m.json");
  {
    std::ofstream out(dir.path() / "t.json");
    out << text.substr(0, text.size() / 2);
  }
  EXPECT_EQ(load_code(dir.path() / "t.json"), ErrorCode::CorruptFile);
}

TEST(ModelIo, VersionMismatch) {
  TempDir dir("version");
  auto j = model_to_json(trained_looking_model());
  j["version"] = kModelFormatVersion + 1;
  {
    std::ofstream out(dir.path() / "v.json");
    out << j.dump();
  }
  EXPECT_EQ(load_code(dir.path() / "v.json"), ErrorCode::VersionMismatch);
}

TEST(ModelIo, WrongShapeIsCorrupt) {
  TempDir dir("shape");
  auto j = model_to_json(trained_looking_model());
  j["config"]["hidden_units"] = 7;
  {
    std::ofstream out(dir.path() / "s.json");
    out << j.dump();
  }
  EXPECT_EQ(load_code(dir.path() / "s.json"), ErrorCode::CorruptFile);
}

TEST(ModelIo, MissingFile) { EXPECT_EQ(load_code("/nonexistent/model.json"), ErrorCode::Io); }

TEST(ModelIo, InputDimMismatchAtForward) {
  TempDir dir("dim");
  save_model(trained_looking_model(), dir.path() / "m.json");
  auto m = load_model(dir.path() / "m.json");
  try {
    embed(m, Eigen::MatrixXd::Zero(150, 12));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}
