#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "effnas/core/checkpoint.hpp"
#include "test_util.hpp"

using namespace effnas;
using testutil::DTensor;

namespace {

Tensor make(Shape s, std::vector<float> v, bool rg = false) { return Tensor(std::move(s), std::move(v), rg); }

void expect_values(const Tensor& t, const std::vector<float>& v) {
  ASSERT_EQ(t.numel(), static_cast<std::int64_t>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_FLOAT_EQ(t[i], v[i]) << "index " << i;
}

}  // namespace

TEST(Tensor, ShapeDataInvariant) {
  EXPECT_THROW(make({2, 3}, {1, 2, 3}), ShapeError);
  EXPECT_THROW(make({2, 0}, {}), ShapeError);
  auto t = make({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6);
  EXPECT_EQ(t.dim(-1), 3);
}

TEST(Matmul, IdentityLeftFactor) {
  auto y = matmul(make({2, 2}, {1, 0, 0, 1}), make({2, 2}, {3, 4, 5, 6}));
  EXPECT_EQ(y.shape(), (Shape{2, 2}));
  expect_values(y, {3, 4, 5, 6});
}

TEST(Matmul, RowTimesColumn) { expect_values(matmul(make({1, 2}, {1, 2}), make({2, 1}, {3, 4})), {11}); }

TEST(Matmul, MatchesTripleLoop) {
  for (int seed = 0; seed < 5; ++seed) {
    auto rng = testutil::rng_for(seed);
    auto a = testutil::randn({4, 5}, rng), b = testutil::randn({5, 3}, rng);
    auto y = matmul(a, b);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 3; ++j) {
        double ref = 0;
        for (int k = 0; k < 5; ++k) ref += double(a[i * 5 + k]) * double(b[k * 3 + j]);
        EXPECT_NEAR(y[i * 3 + j], ref, 1e-6 * std::max(1.0, std::abs(ref)));
      }
  }
}

TEST(Matmul, BatchedBroadcastMatchesPerSlice) {
  auto rng = testutil::rng_for(3);
  auto a = testutil::randn({2, 3, 4, 5}, rng), b = testutil::randn({3, 5, 2}, rng);
  auto y = matmul(a, b);
  ASSERT_EQ(y.shape(), (Shape{2, 3, 4, 2}));
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 2; ++j) {
          double ref = 0;
          for (int k = 0; k < 5; ++k) ref += double(a[((n * 3 + c) * 4 + i) * 5 + k]) * double(b[(c * 5 + k) * 2 + j]);
          EXPECT_NEAR(y[((n * 3 + c) * 4 + i) * 2 + j], ref, 1e-5);
        }
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5}));
    FAIL();
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4,5]"), std::string::npos) << msg;
  }
}

TEST(Elementwise, Identities) {
  auto rng = testutil::rng_for(1);
  auto x = testutil::randn({3, 4}, rng);
  expect_values(elementwise(BinaryOp::add, x, 0.0f), x.to_vector());
  expect_values(elementwise(BinaryOp::mul, x, 1.0f), x.to_vector());
  expect_values(add(make({3}, {1, 2, 3}), make({3}, {4, 5, 6})), {5, 7, 9});
}

TEST(Elementwise, TrailingBroadcast) {
  auto y = add(make({2, 3}, {1, 2, 3, 4, 5, 6}), make({3}, {10, 20, 30}));
  expect_values(y, {11, 22, 33, 14, 25, 36});
  auto z = mul(make({2, 1}, {2, 3}), make({1, 3}, {1, 2, 3}));
  EXPECT_EQ(z.shape(), (Shape{2, 3}));
  expect_values(z, {2, 4, 6, 3, 6, 9});
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeError);
}

TEST(Elementwise, DivisionByZeroIsError) {
  EXPECT_THROW(div(make({2}, {1, 2}), make({2}, {1, 0})), DomainError);
  EXPECT_THROW(elementwise(BinaryOp::div, make({1}, {1}), 0.0f), DomainError);
}

TEST(Elementwise, NonFiniteResultSurfaces) {
  auto big = make({1}, {3e38f});
  EXPECT_THROW(mul(big, big), NonFiniteError);
}

TEST(Reshape, RowMajorOrderPreserved) {
  auto x = make({2, 3}, {1, 2, 3, 4, 5, 6});
  auto y = reshape(reshape(x, {6}), {3, 2});
  EXPECT_EQ(y.shape(), (Shape{3, 2}));
  expect_values(y, x.to_vector());
  EXPECT_THROW(reshape(x, {5}), ShapeError);
}

TEST(Reshape, TokenRoundTripIsExact) {
  auto rng = testutil::rng_for(2);
  auto x = testutil::randn({1, 448, 7, 7}, rng);
  auto tokens = map_to_tokens(x);
  EXPECT_EQ(tokens.shape(), (Shape{1, 49, 448}));
  EXPECT_EQ(tokens[5 * 448 + 17], x[17 * 49 + 5]);
  auto back = tokens_to_map(tokens, 7, 7);
  EXPECT_EQ(back.to_vector(), x.to_vector());
}

TEST(Backward, SumGivesOnes) {
  auto x = make({3}, {1, 2, 3}, true);
  backward(sum(x));
  expect_values(x.grad_tensor(), {1, 1, 1});
}

TEST(Backward, SumOfSquares) {
  auto x = make({3}, {1, 2, 3}, true);
  backward(sum(square(x)));
  expect_values(x.grad_tensor(), {2, 4, 6});
}

TEST(Backward, FanOutAccumulatesAdditively) {
  auto x = make({2}, {1, 2}, true);
  auto y = add(add(x, x), mul(x, Tensor::full({2}, 3.0f)));
  backward(sum(y));
  expect_values(x.grad_tensor(), {5, 5});
}

TEST(Backward, Errors) {
  auto x = make({3}, {1, 2, 3}, true);
  EXPECT_THROW(backward(mul(x, x)), AutogradError);  // non-scalar
  EXPECT_THROW(backward(x), AutogradError);          // nothing recorded
  auto loss = sum(x);
  backward(loss);
  EXPECT_THROW(backward(loss), AutogradError);  // graph already consumed
}

TEST(Backward, NoGradGuardRecordsNothing) {
  auto x = make({3}, {1, 2, 3}, true);
  NoGradGuard g;
  auto y = sum(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Backward, Linearity) {
  for (int seed = 0; seed < 5; ++seed) {
    auto rng = testutil::rng_for(seed);
    auto x = testutil::randn<double>({4, 3}, rng, true);
    auto w = testutil::randn<double>({3, 2}, rng);
    auto f = [&] { return sum(exp(scale(matmul(x, w), 0.3))); };
    auto g = [&] { return sum(square(x)); };
    const double a = 1.7, b = -0.4;
    backward(f());
    auto gf = x.grad_tensor().to_vector();
    x.zero_grad();
    backward(g());
    auto gg = x.grad_tensor().to_vector();
    x.zero_grad();
    backward(add(scale(f(), a), scale(g(), b)));
    auto combined = x.grad().begin();
    for (std::size_t i = 0; i < gf.size(); ++i) EXPECT_NEAR(combined[i], a * gf[i] + b * gg[i], 1e-6);
  }
}

TEST(Backward, DeterministicAcrossRuns) {
  auto run = [] {
    auto rng = testutil::rng_for(42);
    auto a = testutil::randn({8, 16}, rng, true), b = testutil::randn({16, 4}, rng, true);
    auto loss = sum(softmax(matmul(a, b), -1) * testutil::randn({8, 4}, rng));
    backward(loss);
    auto out = a.grad_tensor().to_vector();
    auto gb = b.grad_tensor().to_vector();
    out.insert(out.end(), gb.begin(), gb.end());
    out.push_back(loss.item());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Backward, ElementwiseGradientsMatchFiniteDifferences) {
  for (int seed = 0; seed < 5; ++seed) {
    auto rng = testutil::rng_for(seed);
    auto a = testutil::randn<double>({3, 4}, rng, true);
    auto b = testutil::randn<double>({4}, rng, true);
    auto c = DTensor::full({3, 4}, 2.5);
    auto err = testutil::gradcheck({a, b}, [&] {
      return sum(div(mul(sub(a, b), add(a, b)), add_scalar(square(b), 1.0)) + exp(scale(a, 0.2)) * c);
    });
    EXPECT_LT(err, 1e-4) << "seed " << seed;
  }
}

TEST(Backward, MatmulAndTransposeGradients) {
  for (int seed = 0; seed < 5; ++seed) {
    auto rng = testutil::rng_for(seed);
    auto a = testutil::randn<double>({2, 3, 4}, rng, true);
    auto b = testutil::randn<double>({5, 4}, rng, true);
    auto w = testutil::randn<double>({2, 3, 5}, rng);
    auto err = testutil::gradcheck({a, b}, [&] { return testutil::weighted_sum(matmul(a, transpose(b, 0, 1)), w); });
    EXPECT_LT(err, 1e-4);
  }
}

TEST(Backward, ReductionGradients) {
  for (int seed = 0; seed < 5; ++seed) {
    auto rng = testutil::rng_for(seed);
    auto x = testutil::randn<double>({2, 3, 4}, rng, true);
    auto w = testutil::randn<double>({2, 4}, rng);
    auto err = testutil::gradcheck({x}, [&] { return add(testutil::weighted_sum(mean_axis(x, 1), w), mean(square(x))); });
    EXPECT_LT(err, 1e-4);
  }
}

TEST(Checkpoint, BitExactRoundTrip) {
  auto rng = testutil::rng_for(9);
  Checkpoint ck;
  ck.tensors.emplace_back("a.weight", testutil::randn({3, 4, 2}, rng));
  ck.tensors.emplace_back("scalar", Tensor::scalar(-0.0f));
  ck.tensors.emplace_back("tiny", make({2}, {1e-45f, -3.4e38f}));
  ck.metadata = R"({"k":1})";
  auto bytes = encode_checkpoint(ck);
  auto back = decode_checkpoint(bytes);
  ASSERT_EQ(back.tensors.size(), 3u);
  EXPECT_EQ(back.metadata, ck.metadata);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.tensors[i].first, ck.tensors[i].first);
    EXPECT_EQ(back.tensors[i].second.shape(), ck.tensors[i].second.shape());
    EXPECT_EQ(std::memcmp(back.tensors[i].second.data().data(), ck.tensors[i].second.data().data(),
                          sizeof(float) * ck.tensors[i].second.numel()),
              0);
  }
  EXPECT_EQ(encode_checkpoint(back), bytes);
}

TEST(Checkpoint, LittleEndianHeaderLayout) {
  Checkpoint ck;
  ck.tensors.emplace_back("x", make({1}, {1.0f}));
  auto bytes = encode_checkpoint(ck);
  ASSERT_GE(bytes.size(), 16u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "EFFNASCK");
  EXPECT_EQ(bytes[8], 1);   // version
  EXPECT_EQ(bytes[12], 1);  // count
  // name length, name, rank, one dim, then 1.0f = 0x3f800000
  const std::size_t data_at = 16 + 4 + 1 + 4 + 8;
  EXPECT_EQ(bytes[data_at + 3], 0x3f);
  EXPECT_EQ(bytes[data_at + 2], 0x80);
}

TEST(Checkpoint, CorruptInputsRejected) {
  Checkpoint ck;
  ck.tensors.emplace_back("x", make({2}, {1, 2}));
  auto bytes = encode_checkpoint(ck);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(decode_checkpoint(truncated), FormatError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_checkpoint(trailing), FormatError);
}

TEST(Checkpoint, FileRoundTrip) {
  auto path = (std::filesystem::temp_directory_path() / "effnas_tensor_ck.bin").string();
  Checkpoint ck;
  ck.tensors.emplace_back("w", make({2, 2}, {1, 2, 3, 4}));
  save_checkpoint(path, ck);
  auto back = load_checkpoint(path);
  EXPECT_EQ(back.at("w").to_vector(), ck.tensors[0].second.to_vector());
  EXPECT_THROW(back.at("missing"), Error);
  std::filesystem::remove(path);
}

TEST(Property, BroadcastAgainstNaiveIndexing) {
  auto rng = testutil::rng_for(77);
  for (int trial = 0; trial < 50; ++trial) {
    auto out = testutil::random_shape(rng, 3, 1, 4);
    Shape bs = out;
    for (auto& d : bs)
      if (rng() % 2) d = 1;
    bs.erase(bs.begin(), bs.begin() + static_cast<long>(rng() % 3));
    auto a = testutil::randn(out, rng), b = testutil::randn(bs.empty() ? Shape{1} : bs, rng);
    auto y = add(a, b);
    ASSERT_EQ(y.shape(), out);
    const auto bshape = b.shape();
    for (std::int64_t i = 0; i < y.numel(); ++i) {
      std::int64_t rem = i, bi = 0, bstride = 1;
      std::vector<std::int64_t> idx(out.size());
      for (int d = static_cast<int>(out.size()) - 1; d >= 0; --d) {
        idx[d] = rem % out[d];
        rem /= out[d];
      }
      for (int d = static_cast<int>(bshape.size()) - 1; d >= 0; --d) {
        auto od = idx[out.size() - bshape.size() + d];
        bi += (bshape[d] == 1 ? 0 : od) * bstride;
        bstride *= bshape[d];
      }
      EXPECT_EQ(y[i], a[i] + b[bi]);
    }
  }
}
