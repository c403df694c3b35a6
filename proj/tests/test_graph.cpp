#include <gtest/gtest.h>

#include "dfrec/ops.hpp"
#include "dfrec/rng.hpp"
#include "testutil.hpp"

using namespace dfrec;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Finite-difference check of d(scalar out)/d(input) for a graph builder.
using Builder = std::function<Value<double>(Graph<double>&, const Value<double>&)>;

double fd_input_check(const Tensor<double>& x0, const Builder& build, Rng& rng, int probes = 12,
                      double step = 1e-6) {
  Graph<double> g;
  Value<double> x = g.input(x0, true);
  Value<double> out = build(g, x);
  g.backward(out);
  const auto grad = x.node()->ensure_grad();

  double max_rel = 0.0;
  Tensor<double> xp = x0;
  for (int k = 0; k < probes; ++k) {
    const auto i = static_cast<std::size_t>(rng.next_below(xp.data.size()));
    const double saved = xp.data[i];
    auto eval = [&](double v) {
      xp.data[i] = v;
      Graph<double> g2;
      Value<double> out2 = build(g2, g2.input(xp, false));
      return out2.scalar();
    };
    const double fd = (eval(saved + step) - eval(saved - step)) / (2.0 * step);
    xp.data[i] = saved;
    const double ad = grad[i];
    const double denom = std::max({std::abs(fd), std::abs(ad), 1e-6});
    max_rel = std::max(max_rel, std::abs(fd - ad) / denom);
  }
  return max_rel;
}

TEST(GraphOps, ElementwiseGradients) {
  Rng rng(11);
  const Tensor<double> x = random_tensor({3, 4, 4}, rng);
  const Tensor<double> y = random_tensor({3, 4, 4}, rng);

  auto check = [&](const Builder& b, const char* name) {
    Rng prng(101);
    EXPECT_LT(fd_input_check(x, b, prng), 1e-4) << name;
  };
  check([&](Graph<double>& g, const Value<double>& v) { return sum(add(v, g.input(y))); }, "add");
  check([&](Graph<double>& g, const Value<double>& v) { return sum(sub(v, g.input(y))); }, "sub");
  check([&](Graph<double>& g, const Value<double>& v) { return sum(mul(v, g.input(y))); }, "mul");
  check([&](Graph<double>& g, const Value<double>& v) { return sum(sigmoid(v)); }, "sigmoid");
  check([&](Graph<double>& g, const Value<double>& v) { return sum(gelu(v)); }, "gelu");
  check([&](Graph<double>& g, const Value<double>& v) { return mean(scale(v, 2.5)); }, "scale+mean");
  check([&](Graph<double>& g, const Value<double>& v) { return l2_norm(v); }, "l2_norm");
  check([&](Graph<double>& g, const Value<double>& v) { return smooth_l1_mean(v, g.input(y)); }, "smooth_l1");
}

TEST(GraphOps, ReluSubgradientAwayFromKink) {
  Rng rng(5);
  Tensor<double> x = random_tensor({40}, rng);
  for (auto& v : x.data)
    if (std::abs(v) < 0.05) v += 0.1;  // keep probes away from the kink
  Rng prng(7);
  EXPECT_LT(fd_input_check(x, [](Graph<double>&, const Value<double>& v) { return sum(relu(v)); }, prng), 1e-4);
}

TEST(GraphOps, MatmulAndBatchedGradients) {
  Rng rng(21);
  const Tensor<double> a = random_tensor({5, 4}, rng);
  const Tensor<double> b = random_tensor({4, 6}, rng);
  Rng prng(23);
  EXPECT_LT(fd_input_check(a, [&](Graph<double>& g, const Value<double>& v) { return sum(matmul(v, g.input(b))); },
                           prng),
            1e-4);
  EXPECT_LT(fd_input_check(b, [&](Graph<double>& g, const Value<double>& v) { return sum(matmul(g.input(a), v)); },
                           prng),
            1e-4);

  const Tensor<double> ba = random_tensor({2, 3, 4}, rng);
  const Tensor<double> bb = random_tensor({2, 3, 4}, rng);
  for (const bool ta : {false, true})
    for (const bool tb : {false, true}) {
      // Shapes chosen so every transpose combination is valid: [2,3,4]x[2,3,4]
      // works for (F,T) and (T,F); use [2,4,3] otherwise.
      Tensor<double> rhs = bb;
      if (ta == tb) rhs = random_tensor({2, 4, 3}, rng);
      EXPECT_LT(fd_input_check(ba,
                               [&](Graph<double>& g, const Value<double>& v) {
                                 return sum(batched_matmul(v, g.input(rhs), ta, tb));
                               },
                               prng),
                1e-4)
          << "ta=" << ta << " tb=" << tb;
    }
}

TEST(GraphOps, SoftmaxNormsAndShapesGradients) {
  Rng rng(31);
  const Tensor<double> x = random_tensor({3, 7}, rng);
  const Tensor<double> g1 = random_tensor({7}, rng, 0.5, 1.5);
  const Tensor<double> b1 = random_tensor({7}, rng);
  Rng prng(33);
  const Tensor<double> smw = random_tensor({3, 7}, rng);
  EXPECT_LT(fd_input_check(x,
                           [&](Graph<double>& g, const Value<double>& v) {
                             return sum(mul(softmax_last(v), g.input(smw)));
                           },
                           prng),
            2e-4);
  // Weight the normalized output by a fixed random tensor: a plain norm is
  // nearly invariant to the input, which starves finite differences.
  const Tensor<double> lnw = random_tensor({3, 7}, rng);
  EXPECT_LT(fd_input_check(x,
                           [&](Graph<double>& g, const Value<double>& v) {
                             return sum(mul(layer_norm(v, g.input(g1), g.input(b1)), g.input(lnw)));
                           },
                           prng),
            1e-4);

  const Tensor<double> img = random_tensor({4, 6, 6}, rng);
  const Tensor<double> ig = random_tensor({4}, rng, 0.5, 1.5);
  const Tensor<double> ib = random_tensor({4}, rng);
  const Tensor<double> inw = random_tensor({4, 6, 6}, rng);
  EXPECT_LT(fd_input_check(img,
                           [&](Graph<double>& g, const Value<double>& v) {
                             return sum(mul(instance_norm(v, g.input(ig), g.input(ib)), g.input(inw)));
                           },
                           prng),
            1e-4);

  EXPECT_LT(fd_input_check(img,
                           [&](Graph<double>& g, const Value<double>& v) {
                             auto parts = std::vector<Value<double>>{slice0(v, 1, 3), slice0(v, 0, 1)};
                             return sum(mul(concat0(parts), concat0(parts)));
                           },
                           prng),
            1e-4);
  EXPECT_LT(fd_input_check(img,
                           [&](Graph<double>& g, const Value<double>& v) {
                             return sum(gather_rows(reshape(v, Shape{12, 12}), {3, 3, 0, 7}));
                           },
                           prng),
            1e-4);
  EXPECT_LT(fd_input_check(img,
                           [&](Graph<double>& g, const Value<double>& v) {
                             return l2_norm(permute3(v, 2, 0, 1));
                           },
                           prng),
            1e-4);
}

TEST(GraphOps, ConvAndSpatialGradients) {
  Rng rng(41);
  const Tensor<double> x = random_tensor({3, 8, 8}, rng);
  const Tensor<double> w = random_tensor({5, 3, 3, 3}, rng, -0.5, 0.5);
  const Tensor<double> bias = random_tensor({5}, rng);
  Rng prng(43);

  for (const auto& [stride, pad, dil] : std::vector<std::tuple<int, int, int>>{{1, 1, 1}, {2, 1, 1}, {2, 2, 2}}) {
    auto conv_builder = [&, stride = stride, pad = pad, dil = dil](Graph<double>& g, const Value<double>& v) {
      Value<double> b = g.input(bias);
      return l2_norm(conv2d(v, g.input(w), &b, stride, pad, dil));
    };
    EXPECT_LT(fd_input_check(x, conv_builder, prng), 1e-4) << "x-grad s" << stride << " d" << dil;
    auto wgrad_builder = [&, stride = stride, pad = pad, dil = dil](Graph<double>& g, const Value<double>& v) {
      Value<double> b = g.input(bias);
      return l2_norm(conv2d(g.input(x), v, &b, stride, pad, dil));
    };
    EXPECT_LT(fd_input_check(w, wgrad_builder, prng), 1e-4) << "w-grad s" << stride << " d" << dil;
  }

  EXPECT_LT(fd_input_check(x, [](Graph<double>&, const Value<double>& v) { return l2_norm(upsample_nearest2x(v)); },
                           prng),
            1e-4);
  EXPECT_LT(fd_input_check(x,
                           [](Graph<double>&, const Value<double>& v) {
                             return l2_norm(upsample_bilinear(v, 13, 5));
                           },
                           prng),
            1e-4);
  EXPECT_LT(fd_input_check(x, [](Graph<double>&, const Value<double>& v) { return l2_norm(global_avg_pool(v)); },
                           prng),
            1e-4);
  const Tensor<double> bm = random_tensor({1, 8, 8}, rng, 0.0, 1.0);
  EXPECT_LT(fd_input_check(x,
                           [&](Graph<double>& g, const Value<double>& v) {
                             return l2_norm(broadcast_mul_channel(v, g.input(bm)));
                           },
                           prng),
            1e-4);
  EXPECT_LT(fd_input_check(x,
                           [](Graph<double>&, const Value<double>& v) {
                             return l2_norm(patchify_op(v, 2));
                           },
                           prng),
            1e-4);
}

TEST(GraphOps, PatchifyRoundTrip) {
  Rng rng(51);
  const Tensor<double> x = random_tensor({3, 8, 8}, rng, 0.0, 1.0);
  Graph<double> g;
  Value<double> v = g.input(x);
  Value<double> tokens = patchify_op(v, 4);
  EXPECT_EQ(tokens.shape(), (Shape{4, 48}));
  Value<double> back = unpatchify_op(tokens, 3, 8, 8, 4);
  const auto bv = back.val();
  for (std::size_t i = 0; i < x.data.size(); ++i) EXPECT_EQ(bv[i], x.data[i]);
}

TEST(GraphOps, LossScalars) {
  Graph<double> g;
  // BCE at logit 0 is log 2 for either label.
  EXPECT_NEAR(bce_with_logits(g.scalar_const(0.0), 1.0).scalar(), std::log(2.0), 1e-12);
  EXPECT_NEAR(bce_with_logits(g.scalar_const(0.0), 0.0).scalar(), std::log(2.0), 1e-12);

  Tensor<double> logits({3});
  logits.data = {1.0, 2.0, 3.0};
  const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  EXPECT_NEAR(softmax_cross_entropy(g.input(logits), 2).scalar(), lse - 3.0, 1e-12);

  Rng prng(61);
  Tensor<double> z = random_tensor({6}, prng);
  EXPECT_LT(fd_input_check(z,
                           [](Graph<double>&, const Value<double>& v) {
                             return softmax_cross_entropy(v, 1);
                           },
                           prng),
            1e-4);
}

TEST(GraphOps, ShapeErrors) {
  Graph<double> g;
  Rng rng(71);
  Value<double> a = g.input(random_tensor({2, 3}, rng));
  Value<double> b = g.input(random_tensor({3, 2}, rng));
  EXPECT_THROW(add(a, b), InputError);
  EXPECT_THROW(matmul(a, a), InputError);
  EXPECT_THROW(gather_rows(a, {5}), InputError);
  EXPECT_THROW(patchify_op(g.input(random_tensor({3, 5, 5}, rng)), 2), InputError);
  EXPECT_THROW(g.backward(a), InputError);  // non-scalar loss
}

TEST(GraphOps, ClampPassesInteriorGradientOnly) {
  Tensor<double> x({4});
  x.data = {-0.5, 0.25, 0.75, 1.5};
  Graph<double> g;
  Value<double> v = g.input(x, true);
  g.backward(sum(clamp01(v)));
  const auto grad = v.node()->ensure_grad();
  EXPECT_EQ(grad[0], 0.0);
  EXPECT_EQ(grad[1], 1.0);
  EXPECT_EQ(grad[2], 1.0);
  EXPECT_EQ(grad[3], 0.0);
  const auto out = clamp01(v).val();
  EXPECT_EQ(out[0], 0.0);
  EXPECT_EQ(out[3], 1.0);
}

}  // namespace
