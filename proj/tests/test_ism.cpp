#include <gtest/gtest.h>

#include "dfrec/ism.hpp"
#include "dfrec/rng.hpp"

using namespace dfrec;

namespace {

Tensor<double> random_image(std::int64_t size, Rng& rng) {
  Tensor<double> t({3, size, size});
  for (auto& v : t.data) v = rng.uniform();
  return t;
}

template <typename T>
void zero_all(ParamStore<T>& ps) {
  for (auto& p : ps.all()) std::fill(p->value.begin(), p->value.end(), T(0));
}

TEST(Ism, SpecValidation) {
  IsmSpec bad;
  bad.stage_widths = {16};
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = IsmSpec{};
  bad.dilations = {1, 1};
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_NO_THROW(IsmSpec{}.validate());
}

TEST(Ism, ZeroWeightsGiveHalfMapAndZeroLogit) {
  ParamStore<double> ps;
  IsmModel<double> model = IsmModel<double>::create(ps, IsmSpec{}, 1);
  zero_all(ps);
  Rng rng(2);
  Graph<double> g;
  auto out = model.forward(g, g.input(random_image(32, rng)));
  for (double v : out.m_s.val()) EXPECT_DOUBLE_EQ(v, 0.5);
  EXPECT_DOUBLE_EQ(out.logit.scalar(), 0.0);
}

TEST(Ism, ShapesPurityAndRange) {
  ParamStore<double> ps;
  IsmModel<double> model = IsmModel<double>::create(ps, IsmSpec{}, 7);
  Rng rng(3);
  const Tensor<double> img = random_image(32, rng);

  Graph<double> g1, g2;
  auto o1 = model.forward(g1, g1.input(img));
  auto o2 = model.forward(g2, g2.input(img));
  EXPECT_EQ(o1.m_s.shape(), (Shape{1, 32, 32}));
  EXPECT_EQ(o1.logit.shape(), (Shape{1}));
  for (std::int64_t i = 0; i < o1.m_s.size(); ++i) {
    EXPECT_EQ(o1.m_s.val()[i], o2.m_s.val()[i]);  // bit-identical purity
    EXPECT_GE(o1.m_s.val()[i], 0.0);
    EXPECT_LE(o1.m_s.val()[i], 1.0);
  }
  EXPECT_EQ(o1.logit.scalar(), o2.logit.scalar());

  Graph<double> g3;
  EXPECT_THROW(model.forward(g3, g3.input(random_image(24, rng))), ConfigError);
}

TEST(Ism, BackboneGradientMatchesFiniteDifferences) {
  ParamStore<double> ps;
  IsmModel<double> model = IsmModel<double>::create(ps, IsmSpec{}, 11);
  Rng rng(5);
  const Tensor<double> img = random_image(16, rng);

  auto eval = [&](bool with_grad) {
    Graph<double> g;
    Value<double> loss = sum(model.forward(g, g.input(img)).m_s);
    if (with_grad) {
      g.backward(loss);
      g.harvest_param_grads();
    }
    return loss.scalar();
  };

  ps.zero_grads();
  eval(true);
  // Probe one weight in every backbone stage plus the ASPP branch.
  Rng probe(6);
  double max_rel = 0.0;
  for (const char* name : {"ism.stage0.conv.w", "ism.stage1.conv.w", "ism.aspp1.w", "ism.seg.w"}) {
    ParamTensor<double>& p = ps.at(name);
    const auto i = static_cast<std::size_t>(probe.next_below(p.value.size()));
    const double saved = p.value[i];
    const double h = 1e-5;
    p.value[i] = saved + h;
    const double fp = eval(false);
    p.value[i] = saved - h;
    const double fm = eval(false);
    p.value[i] = saved;
    const double fd = (fp - fm) / (2 * h);
    const double ad = p.grad[i];
    max_rel = std::max(max_rel, std::abs(fd - ad) / std::max({std::abs(fd), std::abs(ad), 1e-8}));
  }
  EXPECT_LT(max_rel, 1e-4);
}

TEST(Ism, SegmentSourceIdentitiesAndLinearity) {
  Rng rng(9);
  Graph<double> g;
  const Tensor<double> img1 = random_image(16, rng);
  const Tensor<double> img2 = random_image(16, rng);
  Tensor<double> ones({1, 16, 16}), zeros({1, 16, 16}), half({1, 16, 16});
  std::fill(ones.data.begin(), ones.data.end(), 1.0);
  std::fill(half.data.begin(), half.data.end(), 0.5);

  Value<double> x1 = g.input(img1), x2 = g.input(img2);
  Value<double> m1 = g.input(ones), m0 = g.input(zeros), mh = g.input(half);

  auto v_ones = segment_source(x1, m1).val();
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(img1.data.size()); ++i) EXPECT_EQ(v_ones[i], img1.data[i]);
  for (double v : segment_source(x1, m0).val()) EXPECT_EQ(v, 0.0);
  auto v_half = segment_source(x1, mh).val();
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(img1.data.size()); ++i)
    EXPECT_DOUBLE_EQ(v_half[i], 0.5 * img1.data[i]);

  // Linearity in the image argument.
  Rng mrng(10);
  Tensor<double> m({1, 16, 16});
  for (auto& v : m.data) v = mrng.uniform();
  Value<double> mm = g.input(m);
  Value<double> lhs = segment_source(add(scale(x1, 2.0), scale(x2, -3.0)), mm);
  Value<double> rhs = add(scale(segment_source(x1, mm), 2.0), scale(segment_source(x2, mm), -3.0));
  for (std::int64_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs.val()[i], rhs.val()[i], 1e-15);

  Tensor<double> wrong({1, 8, 8});
  EXPECT_THROW(segment_source(x1, g.input(wrong)), InputError);
}

}  // namespace
