#include <gtest/gtest.h>

#include <random>

#include "headfield/latent.hpp"
#include "headfield/ops.hpp"

using namespace headfield;

namespace {

std::vector<FrameKey> grid_keys(int subjects, int expressions, int lightings, int views = 1) {
  std::vector<FrameKey> keys;
  for (int s = 0; s < subjects; ++s)
    for (int e = 0; e < expressions; ++e)
      for (int l = 0; l < lightings; ++l)
        for (int v = 0; v < views; ++v)
          keys.push_back({"s" + std::to_string(s), "e" + std::to_string(e), "l" + std::to_string(l)});
  return keys;
}

LatentState<double> state(double id, double exp, double alb, double ill) {
  return {Tensor<double>::full({3}, id), Tensor<double>::full({2}, exp), Tensor<double>::full({3}, alb),
          Tensor<double>::full({2}, ill)};
}

}  // namespace

TEST(Registry, SharingCounts) {
  const auto reg = LatentRegistry<float>::create(grid_keys(2, 3, 2), LatentDims{}, {});
  EXPECT_EQ(reg.count(Attribute::id), 2u);
  EXPECT_EQ(reg.count(Attribute::exp), 6u);
  EXPECT_EQ(reg.count(Attribute::alb), 2u);
  EXPECT_EQ(reg.count(Attribute::ill), 2u);
}

TEST(Registry, SharedStorage) {
  const auto reg = LatentRegistry<float>::create(grid_keys(2, 2, 2), LatentDims{}, {});
  const auto a = reg.state_for({"s0", "e0", "l0"});
  const auto b = reg.state_for({"s0", "e1", "l1"});
  const auto c = reg.state_for({"s0", "e0", "l1"});
  const auto d = reg.state_for({"s1", "e0", "l0"});
  EXPECT_EQ(a.z_id.storage_id(), b.z_id.storage_id());
  EXPECT_EQ(a.z_alb.storage_id(), b.z_alb.storage_id());
  EXPECT_EQ(a.z_exp.storage_id(), c.z_exp.storage_id());
  EXPECT_NE(a.z_exp.storage_id(), b.z_exp.storage_id());
  EXPECT_EQ(a.z_ill.storage_id(), d.z_ill.storage_id());
  EXPECT_NE(a.z_id.storage_id(), d.z_id.storage_id());
}

TEST(Registry, SeededInitDeterministicAndSigmaZero) {
  LatentInit init;
  init.seed = 5;
  const auto a = LatentRegistry<double>::create(grid_keys(2, 2, 1), LatentDims{}, init);
  const auto b = LatentRegistry<double>::create(grid_keys(2, 2, 1), LatentDims{}, init);
  for (std::size_t i = 0; i < a.named_codes().size(); ++i) {
    EXPECT_EQ(a.named_codes()[i].first, b.named_codes()[i].first);
    EXPECT_EQ(a.named_codes()[i].second.values(), b.named_codes()[i].second.values());
  }
  init.sigma = 0;
  const auto z = LatentRegistry<double>::create(grid_keys(2, 2, 1), LatentDims{}, init);
  for (const auto& [name, t] : z.named_codes())
    for (double v : t.values()) EXPECT_EQ(v, 0.0);
}

TEST(Registry, InitOrderIndependentOfManifestOrder) {
  auto keys = grid_keys(3, 2, 2);
  const auto a = LatentRegistry<double>::create(keys, LatentDims{}, {});
  std::reverse(keys.begin(), keys.end());
  const auto b = LatentRegistry<double>::create(keys, LatentDims{}, {});
  for (std::size_t i = 0; i < a.named_codes().size(); ++i)
    EXPECT_EQ(a.named_codes()[i].second.values(), b.named_codes()[i].second.values());
}

TEST(Registry, InitialCodesFrozen) {
  auto reg = LatentRegistry<double>::create(grid_keys(1, 1, 1), LatentDims{}, {});
  const FrameKey k{"s0", "e0", "l0"};
  const auto before = reg.initial_for(k).z_id.values();
  auto live = reg.state_for(k);
  for (auto& v : live.z_id.mutable_data()) v += 1.0;
  EXPECT_EQ(reg.initial_for(k).z_id.values(), before);
  EXPECT_NE(reg.state_for(k).z_id.values(), before);
}

TEST(Registry, FileInitAndErrors) {
  const LatentDims d{2, 1, 2, 1};
  LatentInit init;
  init.source = LatentInit::Source::file;
  init.document = {{"id", {{"s0", {0.5, 0.25}}}}, {"exp", {{"s0/e0", {1.0}}}}, {"alb", {{"s0", {0.0, -1.0}}}}, {"ill", {{"l0", {2.0}}}}};
  const auto reg = LatentRegistry<double>::create(grid_keys(1, 1, 1), d, init);
  EXPECT_EQ(reg.state_for({"s0", "e0", "l0"}).z_id.values(), (std::vector<double>{0.5, 0.25}));
  init.document["id"]["s0"] = {1.0};
  EXPECT_THROW(LatentRegistry<double>::create(grid_keys(1, 1, 1), d, init), ManifestError);
  EXPECT_THROW(reg.state_for({"s9", "e0", "l0"}), ManifestError);
}

TEST(Registry, SharedGradientIsSumOfFrames) {
  auto reg = LatentRegistry<double>::create(grid_keys(1, 2, 1), LatentDims{3, 2, 3, 2}, {});
  const auto w = Tensor<double>::from({3}, {0.3, -1.1, 2.0});
  auto frame_loss = [&](const FrameKey& k, double s) {
    const auto st = reg.state_for(k);
    return sum(mul(exp(scale(st.z_id, s)), w));
  };
  const FrameKey a{"s0", "e0", "l0"}, b{"s0", "e1", "l0"};
  frame_loss(a, 1.0).backward();
  const auto ga = std::vector<double>(reg.state_for(a).z_id.grad().begin(), reg.state_for(a).z_id.grad().end());
  reg.state_for(a).z_id.zero_grad();
  frame_loss(b, 2.0).backward();
  const auto gb = std::vector<double>(reg.state_for(b).z_id.grad().begin(), reg.state_for(b).z_id.grad().end());
  reg.state_for(a).z_id.zero_grad();
  add(frame_loss(a, 1.0), frame_loss(b, 2.0)).backward();
  const auto joint = reg.state_for(a).z_id.grad();
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(joint[i], ga[i] + gb[i], 1e-12 * (1 + std::abs(joint[i])));
}

TEST(Interpolate, Examples) {
  const auto a = state(1, 2, 3, 4), b = state(5, 6, 7, 8);
  const auto t0 = interpolate(a, b, Attribute::exp, 0.0);
  for (auto attr : kAttributes) EXPECT_EQ(t0[attr].values(), a[attr].values());
  const auto t1 = interpolate(a, b, Attribute::exp, 1.0);
  EXPECT_EQ(t1.z_exp.values(), b.z_exp.values());
  EXPECT_EQ(t1.z_id.values(), a.z_id.values());
  EXPECT_EQ(t1.z_alb.values(), a.z_alb.values());
  EXPECT_EQ(t1.z_ill.values(), a.z_ill.values());
  const auto mid = interpolate(a, b, Attribute::id, 0.5);
  for (double v : mid.z_id.values()) EXPECT_EQ(v, 3.0);
  EXPECT_EQ(a.z_exp[0], 2.0);  // inputs untouched
  EXPECT_EQ(b.z_id[0], 5.0);
  EXPECT_THROW(interpolate(a, b, Attribute::id, 1.5), ParameterError);
  EXPECT_NO_THROW(interpolate(a, b, Attribute::id, 1.5, true));
}

TEST(TransferExpression, Examples) {
  const auto target = state(1, 2, 3, 4);
  const auto same = transfer_expression(target, {target});
  ASSERT_EQ(same.size(), 1u);
  for (auto attr : kAttributes) EXPECT_EQ(same[0][attr].values(), target[attr].values());
  const auto out = transfer_expression(target, {state(9, 10, 11, 12), state(0, -1, 0, 0)});
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[1].z_exp[0], -1.0);
  for (const auto& s : out) {
    EXPECT_EQ(s.z_id.values(), target.z_id.values());
    EXPECT_EQ(s.z_alb.values(), target.z_alb.values());
    EXPECT_EQ(s.z_ill.values(), target.z_ill.values());
  }
  LatentState<double> bad = target.clone();
  bad.z_exp = Tensor<double>::zeros({5});
  EXPECT_THROW(transfer_expression(target, {bad}), ParameterError);
}

TEST(LatentDocument, RoundTripAndValidation) {
  const auto s = state(0.5, -0.25, 1.0, 2.0);
  const auto back = latent_from_json<double>(to_json(s));
  for (auto attr : kAttributes) EXPECT_EQ(back[attr].values(), s[attr].values());
  EXPECT_THROW(latent_from_json<double>(nlohmann::json{{"z_id", {1.0}}}), ParameterError);
  EXPECT_THROW(check_dims(s, LatentDims{}), ParameterError);
  EXPECT_EQ(parse_attribute("exp"), Attribute::exp);
  EXPECT_EQ(parse_attribute("z_ill"), Attribute::ill);
}
