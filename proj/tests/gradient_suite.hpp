#pragma once

// Central-difference gradient checks for every differentiable operator,
// instantiated in double precision. Each case builds random inputs from a
// seed and returns the worst relative error over all inputs.

#include <string>
#include <vector>

#include "effnas/nn/blocks.hpp"
#include "effnas/supernet/gumbel.hpp"
#include "test_util.hpp"

namespace gradsuite {

using namespace effnas;
using testutil::DTensor;

struct Case {
  std::string name;
  double (*run)(std::uint64_t seed);
};

inline DTensor rn(Shape s, std::mt19937_64& rng, bool rg = true, double sd = 1.0) {
  return testutil::randn<double>(std::move(s), rng, rg, sd);
}

inline double conv_case(std::uint64_t seed) {
  auto rng = testutil::rng_for(seed);
  auto x = rn({2, 3, 5, 5}, rng);
  nn::ConvParams<double> p{rn({4, 3, 3, 3}, rng), rn({4}, rng), 2, 1};
  auto w = rn({2, 4, 3, 3}, rng, false);
  auto err = testutil::gradcheck({x, p.weight, p.bias}, [&] { return testutil::weighted_sum(nn::conv2d(x, p), w); });
  nn::ConvParams<double> pw{rn({5, 3, 1, 1}, rng), {}, 1, 0};
  auto w2 = rn({2, 5, 5, 5}, rng, false);
  return std::max(err, testutil::gradcheck({x, pw.weight}, [&] { return testutil::weighted_sum(nn::conv2d(x, pw), w2); }));
}

inline double batchnorm_case(std::uint64_t seed) {
  auto rng = testutil::rng_for(seed);
  auto x = rn({4, 3, 3, 3}, rng);
  auto bn = nn::init::batchnorm<double>(3);
  bn.gamma = rn({3}, rng);
  bn.beta = rn({3}, rng);
  auto w = rn({4, 3, 3, 3}, rng, false);
  return testutil::gradcheck({x, bn.gamma, bn.beta},
                             [&] { return testutil::weighted_sum(nn::batchnorm(x, bn, true), w); });
}

inline double layernorm_case(std::uint64_t seed) {
  auto rng = testutil::rng_for(seed);
  auto x = rn({2, 3, 6}, rng);
  nn::LNParams<double> p{rn({6}, rng), rn({6}, rng)};
  auto w = rn({2, 3, 6}, rng, false);
  double err = testutil::gradcheck({x, p.gamma, p.beta}, [&] { return testutil::weighted_sum(nn::layernorm(x, p), w); });
  auto x4 = rn({2, 4, 2, 3}, rng);
  nn::LNParams<double> pc{rn({4}, rng), rn({4}, rng)};
  auto w4 = rn({2, 4, 2, 3}, rng, false);
  return std::max(err, testutil::gradcheck({x4, pc.gamma, pc.beta},
                                           [&] { return testutil::weighted_sum(nn::layernorm_channels(x4, pc), w4); }));
}

inline double groupnorm_case(std::uint64_t seed) {
  auto rng = testutil::rng_for(seed);
  auto x = rn({2, 4, 3, 3}, rng);
  nn::GNParams<double> p{rn({4}, rng), rn({4}, rng), 2};
  auto w = rn({2, 4, 3, 3}, rng, false);
  return testutil::gradcheck({x, p.gamma, p.beta}, [&] { return testutil::weighted_sum(nn::groupnorm(x, p), w); });
}

inline double gelu_case(std::uint64_t seed) {
  auto rng = testutil::rng_for(seed);
  auto x = rn({3, 7}, rng, true, 2.0);
  auto w = rn({3, 7}, rng, false);
  return testutil::gradcheck({x}, [&] { return testutil::weighted_sum(gelu(x), w); });
}

inline double avgpool_case(std::uint64_t seed) {
  auto rng = testutil::rng_for(seed);
  auto x = rn({2, 2, 4, 5}, rng);
  auto w = rn({2, 2, 4, 5}, rng, false);
  return testutil::gradcheck({x}, [&] { return testutil::weighted_sum(nn::avgpool3x3(x), w); });
}

inline double linear_case(std::uint64_t seed) {
  auto rng = testutil::rng_for(seed);
  auto x = rn({2, 3, 5}, rng);
  auto wt = rn({5, 4}, rng), b = rn({4}, rng);
  auto w = rn({2, 3, 4}, rng, false);
  return testutil::gradcheck({x, wt, b}, [&] { return testutil::weighted_sum(linear(x, wt, b), w); });
}

inline double softmax_case(std::uint64_t seed) {
  auto rng = testutil::rng_for(seed);
  auto x = rn({3, 4, 5}, rng);
  auto w = rn({3, 4, 5}, rng, false);
  double err = testutil::gradcheck({x}, [&] {
    return add(testutil::weighted_sum(softmax(x, 1), w), testutil::weighted_sum(softmax(x, -1), w));
  });
  auto logits = rn({4, 3}, rng);
  std::vector<int> labels{0, 2, 1, 2};
  return std::max(err, testutil::gradcheck({logits}, [&] { return cross_entropy(logits, labels); }));
}

inline nn::AttnParams<double> random_attention(std::mt19937_64& rng, std::int64_t c, int heads, int dqk, int dv,
                                               std::int64_t n, double sd = 0.25) {
  nn::AttnParams<double> p;
  auto lin = [&](std::int64_t i, std::int64_t o) { return nn::LinearParams<double>{rn({i, o}, rng, true, sd), rn({o}, rng, true, 0.1)}; };
  p.q = lin(c, heads * dqk);
  p.k = lin(c, heads * dqk);
  p.v = lin(c, heads * dv);
  p.o = lin(heads * dv, c);
  p.attn_bias = rn({heads, n, n}, rng, true, 0.5);
  p.heads = heads;
  p.d_qk = dqk;
  p.d_v = dv;
  return p;
}

inline double mhsa_case(std::uint64_t seed) {
  auto rng = testutil::rng_for(seed);
  auto x = rn({2, 4, 8}, rng);
  auto p = random_attention(rng, 8, 2, 4, 3, 4);
  auto w = rn({2, 4, 8}, rng, false);
  return testutil::gradcheck({x, p.q.weight, p.k.weight, p.v.weight, p.o.weight, p.q.bias, p.o.bias, p.attn_bias},
                             [&] { return testutil::weighted_sum(nn::mhsa(x, p), w); });
}

inline double mb4d_case(std::uint64_t seed) {
  auto rng = testutil::rng_for(seed);
  auto x = rn({2, 4, 3, 3}, rng);
  auto p = nn::make_mb4d<double>(4, 2, nn::Norm4dKind::bn, rng);
  auto w = rn({2, 4, 3, 3}, rng, false);
  return testutil::gradcheck({x, p.fc1.conv.weight, p.fc2.conv.weight},
                             [&] { return testutil::weighted_sum(nn::mb4d_forward(x, p, Activation::gelu, true), w); });
}

inline double mb3d_case(std::uint64_t seed) {
  auto rng = testutil::rng_for(seed);
  auto x = rn({1, 4, 8}, rng);
  auto p = nn::make_mb3d<double>(8, 2, 4, 4, 2, 4, rng);
  p.attn = random_attention(rng, 8, 2, 4, 4, 4);
  p.fc1.weight = rn({8, 16}, rng, true, 0.3);
  p.fc2.weight = rn({16, 8}, rng, true, 0.3);
  auto w = rn({1, 4, 8}, rng, false);
  return testutil::gradcheck({x, p.attn.q.weight, p.attn.attn_bias, p.fc1.weight, p.fc2.weight, p.ln1.gamma},
                             [&] { return testutil::weighted_sum(nn::mb3d_forward(x, p, Activation::gelu), w); });
}

inline double gumbel_case(std::uint64_t seed) {
  auto rng = testutil::rng_for(seed);
  auto alpha = rn({3}, rng);
  const auto eps = supernet::sample_noise(3, supernet::NoiseKind::uniform_as_written, rng);
  auto w = rn({3}, rng, false);
  return testutil::gradcheck({alpha},
                             [&] { return testutil::weighted_sum(supernet::branch_weights(alpha, eps, 0.7), w); });
}

inline std::vector<Case> nn_cases() {
  return {{"conv2d", conv_case},       {"batchnorm_train", batchnorm_case}, {"layernorm", layernorm_case},
          {"groupnorm", groupnorm_case}, {"gelu", gelu_case},               {"avgpool3x3", avgpool_case},
          {"linear", linear_case},       {"softmax", softmax_case},         {"mhsa", mhsa_case},
          {"mb4d", mb4d_case},           {"mb3d", mb3d_case},               {"gumbel_branch_weights", gumbel_case}};
}

}  // namespace gradsuite
