#include "ex2/checkpoint.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace ex2;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("ex2_test_" + name)).string();
}

}  // namespace

TEST(Checkpoint, PolicyRoundTrip) {
  for (bool discrete : {true, false}) {
    const rl::ActionSpec spec{discrete, 3, 2, -1, 1};
    const auto p = rl::Policy::make(4, spec, {5, 3}, -0.7, 0.0, 11);
    Checkpoint ck;
    put_policy(ck, p);
    const auto q = get_policy(parse_checkpoint(checkpoint_bytes(ck)));
    EXPECT_EQ(q.net.flatten(), p.net.flatten());
    EXPECT_EQ(q.head, p.head);
    EXPECT_EQ(q.log_std, p.log_std);
  }
}

TEST(Checkpoint, AmortizedRoundTrip) {
  auto m = AmortizedLatent::make(2, 3, {4}, 0.02, 16, 5);
  m.standardize = true;
  std::vector<State> pool{State::Constant(2, 1.0), State::Constant(2, 3.0)};
  m.scaler = InputScaler::fit(pool);
  Checkpoint ck;
  put_amortized(ck, m);
  const auto back = get_amortized(parse_checkpoint(checkpoint_bytes(ck)));
  ASSERT_TRUE(back.has_value());
  EXPECT_EQ(back->latent_dim, 3);
  EXPECT_EQ(back->kl_weight, 0.02);
  EXPECT_EQ(back->eval_samples, 16);
  EXPECT_TRUE(back->standardize);
  Eigen::MatrixXd x(2, 3);
  x << 0.1, 2.0, -1.0, 0.5, 0.3, 4.0;
  EXPECT_EQ(back->evaluate(x, 7), m.evaluate(x, 7));
}

TEST(Checkpoint, StatesRoundTrip) {
  std::vector<State> s{State::Constant(2, 1.5), State::Constant(2, -2.0)};
  Checkpoint ck;
  put_states(ck, "states.x", s);
  EXPECT_EQ(get_states(parse_checkpoint(checkpoint_bytes(ck)), "states.x"), s);
  EXPECT_TRUE(get_states(ck, "absent").empty());
}

TEST(Checkpoint, BytesAreDeterministicAndFileRoundTrips) {
  Checkpoint ck;
  put_policy(ck, rl::Policy::make(2, {true, 2, 0, 0, 0}, {3}, 0, 0, 1));
  EXPECT_EQ(checkpoint_bytes(ck), checkpoint_bytes(ck));
  const auto path = temp_path("ck.bin");
  save_checkpoint(ck, path);
  EXPECT_EQ(checkpoint_bytes(load_checkpoint(path)), checkpoint_bytes(ck));
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptInput) {
  Checkpoint ck;
  put_policy(ck, rl::Policy::make(2, {true, 2, 0, 0, 0}, {3}, 0, 0, 1));
  const std::string good = checkpoint_bytes(ck);
  EXPECT_THROW(parse_checkpoint("junk"), CheckpointError);
  EXPECT_THROW(parse_checkpoint(good.substr(0, good.size() - 3)), CheckpointError);
  EXPECT_THROW(parse_checkpoint(good + "x"), CheckpointError);
  std::string bad_version = good;
  bad_version[8] = 9;
  EXPECT_THROW(parse_checkpoint(bad_version), CheckpointError);
  EXPECT_THROW(load_checkpoint("/nonexistent/ck.bin"), CheckpointError);
}

TEST(Checkpoint, MissingRecordsReported) {
  Checkpoint ck;
  EXPECT_THROW(get_policy(ck), CheckpointError);
  EXPECT_FALSE(get_amortized(ck).has_value());
}
