#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "ceseg/ce_block.hpp"
#include "ceseg/metrics.hpp"
#include "ceseg/model.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace ceseg;
using ceseg::testing::brute_force_matching;
using ceseg::testing::random_tensor;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.depth = 2;
    c.base_channels = 4;
    c.embed_channels = 3;
    c.r = 4;
    c.k = 1;
    return c;
}

Tensor<double> random_binary_prob(std::size_t n, std::size_t h, std::size_t w, double density, std::mt19937_64& rng) {
    Tensor<double> p(1, n, h, w);
    std::bernoulli_distribution on(density);
    for (auto& v : p.values()) v = on(rng) ? 1.0 : 0.0;
    return p;
}

}  // namespace

// --- distance ----------------------------------------------------------------

TEST(EmbeddingDistance, IdenticalVectorsAreAtZero) {
    const std::vector<double> e{0.3, -1.2, 4.0};
    EXPECT_EQ(pairwise_embedding_distance<double>(e, e), 0.0);
}

TEST(EmbeddingDistance, SquaredNormTwoGivesTanhOne) {
    // 1 - 2 / (1 + e^2)
    const std::vector<double> a{1.0, 0.0}, b{0.0, 1.0};
    const double naive = 1.0 - 2.0 / (1.0 + std::exp(2.0));
    EXPECT_NEAR(pairwise_embedding_distance<double>(a, b), 0.761594, 1e-6);
    EXPECT_NEAR(pairwise_embedding_distance<double>(a, b), naive, 1e-15);
}

TEST(EmbeddingDistance, LargeSquaredNormSaturatesWithoutOverflow) {
    const std::vector<double> a{0.0}, b{std::sqrt(1000.0)};
    const double d = pairwise_embedding_distance<double>(a, b);
    EXPECT_TRUE(std::isfinite(d));
    EXPECT_NEAR(d, 1.0, std::numeric_limits<double>::epsilon());
    const std::vector<float> af{0.0f}, bf{std::sqrt(1000.0f)};
    EXPECT_NEAR(pairwise_embedding_distance<float>(af, bf), 1.0f, std::numeric_limits<float>::epsilon());
}

TEST(EmbeddingDistance, LengthMismatchThrows) {
    const std::vector<double> a{1.0, 2.0}, b{1.0};
    EXPECT_THROW(pairwise_embedding_distance<double>(a, b), InputError);
}

TEST(EmbeddingDistanceProperty, TanhFormMatchesNaiveForm) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> s(0.0, 100.0);
    for (int i = 0; i < 10000; ++i) {
        const double v = s(rng);
        ASSERT_LT(std::abs((1.0 - 2.0 / (1.0 + std::exp(v))) - embedding_distance(v)), 1e-12) << v;
    }
}

TEST(EmbeddingDistanceProperty, SymmetricBoundedMonotone) {
    std::mt19937_64 rng(12);
    std::uniform_int_distribution<int> dim(1, 6);
    std::normal_distribution<double> g(0.0, 2.0);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> a(std::size_t(dim(rng))), b(a.size());
        for (auto& v : a) v = g(rng);
        for (auto& v : b) v = g(rng);
        const double dab = pairwise_embedding_distance<double>(a, b);
        ASSERT_EQ(dab, pairwise_embedding_distance<double>(b, a));
        ASSERT_GE(dab, 0.0);
        ASSERT_LE(dab, 1.0);
        // Moving b further from a along (b - a) never decreases d.
        std::vector<double> c(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] + 1.5 * (b[i] - a[i]);
        ASSERT_GE(pairwise_embedding_distance<double>(a, c), dab);
    }
    // Strictly below 1 wherever tanh has not rounded to 1.
    EXPECT_LT(embedding_distance(30.0), 1.0);
}

// --- neighbour rule -----------------------------------------------------------

TEST(NeighborIndices, FourSlicesIntervalOne) {
    EXPECT_EQ(neighbor_indices(4, 1), (std::vector<std::size_t>{1, 0, 1, 2}));
}

TEST(NeighborIndices, ThreeSlicesIntervalTwoIsRejected) {
    EXPECT_THROW(neighbor_indices(3, 2), InputError);
}

TEST(NeighborIndices, FirstLSlicesLookForward) {
    EXPECT_EQ(neighbor_indices(6, 2), (std::vector<std::size_t>{2, 3, 0, 1, 2, 3}));
    EXPECT_EQ(neighbor_indices(2, 1), (std::vector<std::size_t>{1, 0}));
    EXPECT_THROW(neighbor_indices(1, 1), InputError);
    EXPECT_THROW(neighbor_indices(5, 0), ConfigError);
}

TEST(NeighborIndicesProperty, EveryIndexIsInRangeAndLApart) {
    for (int l = 1; l <= 4; ++l)
        for (std::size_t n = std::size_t(2 * l); n < 40; ++n) {
            const auto nb = neighbor_indices(n, l);
            ASSERT_EQ(nb.size(), n);
            for (std::size_t i = 0; i < n; ++i) {
                ASSERT_LT(nb[i], n);
                ASSERT_EQ(std::abs(std::ptrdiff_t(nb[i]) - std::ptrdiff_t(i)), l);
                ASSERT_EQ(nb[i] > i, i < std::size_t(l));
            }
        }
}

// --- matching -----------------------------------------------------------------

TEST(NeighboringMatching, EmptyNeighbourGivesOneEverywhere) {
    std::mt19937_64 rng(1);
    const auto e = random_tensor<double>({3, 2, 6, 7}, rng);
    const auto nb = random_tensor<double>({3, 2, 6, 7}, rng);
    const Tensor<double> prob(1, 2, 6, 7, 0.2);
    const auto m = neighboring_matching(e, nb, prob, 2, 0.5);
    for (double v : m.distance.values()) EXPECT_EQ(v, 1.0);
    for (auto a : m.argmin) EXPECT_EQ(a, -1);
}

TEST(NeighboringMatching, IdenticalEmbeddingOnOrganPixelIsZero) {
    std::mt19937_64 rng(2);
    const auto e = random_tensor<double>({4, 1, 8, 8}, rng);
    Tensor<double> prob(1, 1, 8, 8, 0.0);
    prob.at(0, 0, 3, 5) = 0.5;  // threshold itself counts as organ
    const auto m = neighboring_matching(e, e, prob, 0, 0.5);
    EXPECT_EQ(m.distance.at(0, 0, 3, 5), 0.0);
    EXPECT_EQ(m.argmin[3 * 8 + 5], 3 * 8 + 5);
    EXPECT_EQ(m.distance.at(0, 0, 3, 4), 1.0);
}

TEST(NeighboringMatching, SmallInstanceEqualsOracle) {
    std::mt19937_64 rng(3);
    const auto e = random_tensor<double>({3, 1, 5, 5}, rng);
    const auto nb = random_tensor<double>({3, 1, 5, 5}, rng);
    const auto prob = random_binary_prob(1, 5, 5, 0.4, rng);
    const auto got = neighboring_matching(e, nb, prob, 1, 0.5);
    const auto want = brute_force_matching(e, nb, prob, 1, 0.5);
    for (std::size_t i = 0; i < got.distance.size(); ++i) EXPECT_EQ(got.distance[i], want.distance[i]) << i;
}

TEST(NeighboringMatching, ShapeMismatchThrows) {
    const Tensor<double> a(2, 1, 4, 4), b(2, 1, 4, 5), p(1, 1, 4, 4);
    EXPECT_THROW(neighboring_matching(a, b, p, 1, 0.5), InputError);
    const Tensor<double> p2(1, 2, 4, 4);
    EXPECT_THROW(neighboring_matching(a, a, p2, 1, 0.5), InputError);
    EXPECT_THROW(neighboring_matching(a, a, p, -1, 0.5), ConfigError);
}

// Oracle comparison on random instances of every size the criterion covers.
// The distance must match exactly; the reported arg-min must be an organ
// pixel inside the window that attains that distance.
template <typename T>
void check_against_oracle(std::uint64_t seed, int instances) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> side(1, 16), chans(1, 4), count(1, 3);
    std::uniform_int_distribution<int> radius(0, 3);
    std::uniform_real_distribution<double> density(0.0, 1.0);
    for (int t = 0; t < instances; ++t) {
        const Shape s{chans(rng), count(rng), side(rng), side(rng)};
        const int k = radius(rng);
        const auto e = random_tensor<T>(s, rng);
        const auto nb = random_tensor<T>(s, rng);
        Tensor<T> prob(1, s.count, s.height, s.width);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double dens = density(rng);
        for (auto& v : prob.values()) v = T(u(rng) < dens ? 0.5 + 0.5 * u(rng) : 0.5 * u(rng));
        const auto got = neighboring_matching(e, nb, prob, k, 0.5);
        const auto want = brute_force_matching<T>(e, nb, prob, k, 0.5);
        for (std::size_t i = 0; i < got.distance.size(); ++i) {
            ASSERT_EQ(got.distance[i], want.distance[i]) << "instance " << t << " pixel " << i;
            ASSERT_EQ(got.argmin[i] < 0, want.argmin[i] < 0);
            if (got.argmin[i] < 0) continue;
            const std::size_t n = i / s.plane(), p = i % s.plane(), q = std::size_t(got.argmin[i]);
            ASSERT_LE(std::abs(std::ptrdiff_t(p / s.width) - std::ptrdiff_t(q / s.width)), k);
            ASSERT_LE(std::abs(std::ptrdiff_t(p % s.width) - std::ptrdiff_t(q % s.width)), k);
            ASSERT_GE(prob.at(0, n, q / s.width, q % s.width), T(0.5));
            std::vector<T> ep(s.channels), eq(s.channels);
            for (std::size_t c = 0; c < s.channels; ++c) {
                ep[c] = e.at(c, n, p / s.width, p % s.width);
                eq[c] = nb.at(c, n, q / s.width, q % s.width);
            }
            ASSERT_EQ(pairwise_embedding_distance<T>(ep, eq), got.distance[i]);
        }
    }
}

TEST(NeighboringMatchingProperty, EqualsOracleDouble) { check_against_oracle<double>(100, 200); }
TEST(NeighboringMatchingProperty, EqualsOracleFloat) { check_against_oracle<float>(101, 200); }

TEST(NeighboringMatchingProperty, WideWindowEqualsGlobalSearch) {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 50; ++t) {
        const Shape s{2, 1, 1 + rng() % 10, 1 + rng() % 10};
        const auto e = random_tensor<double>(s, rng);
        const auto nb = random_tensor<double>(s, rng);
        const auto prob = random_binary_prob(1, s.height, s.width, 0.3, rng);
        const int k = int(std::max(s.height, s.width));
        const auto local = neighboring_matching(e, nb, prob, k, 0.5);
        const auto global = brute_force_matching<double>(e, nb, prob, std::nullopt, 0.5);
        for (std::size_t i = 0; i < local.distance.size(); ++i) ASSERT_EQ(local.distance[i], global.distance[i]);
    }
}

TEST(NeighboringMatching, FarOrganIsInvisibleToTheLocalWindow) {
    std::mt19937_64 rng(5);
    const auto e = random_tensor<double>({2, 1, 12, 12}, rng);
    Tensor<double> prob(1, 1, 12, 12, 0.0);
    prob.at(0, 0, 11, 11) = 1.0;
    const auto local = neighboring_matching(e, e, prob, 2, 0.5);
    const auto global = brute_force_matching<double>(e, e, prob, std::nullopt, 0.5);
    EXPECT_EQ(local.distance.at(0, 0, 0, 0), 1.0);
    EXPECT_LT(global.distance.at(0, 0, 0, 0), 1.0);
}

TEST(NeighboringMatching, BackwardIsTheSubgradientThroughTheArgmin) {
    std::mt19937_64 rng(6);
    const auto e = random_tensor<double>({3, 1, 6, 6}, rng, -0.5, 0.5);
    const auto nb = random_tensor<double>({3, 1, 6, 6}, rng, -0.5, 0.5);
    const auto prob = random_binary_prob(1, 6, 6, 0.5, rng);
    const auto weights = random_tensor<double>({1, 1, 6, 6}, rng);
    auto loss = [&](const Tensor<double>& a, const Tensor<double>& b) {
        const auto m = neighboring_matching(a, b, prob, 1, 0.5);
        double s = 0;
        for (std::size_t i = 0; i < m.distance.size(); ++i) s += weights[i] * m.distance[i];
        return std::make_pair(s, m.argmin);
    };
    const auto match = neighboring_matching(e, nb, prob, 1, 0.5);
    Tensor<double> de(e.shape()), dnb(nb.shape());
    neighboring_matching_backward(e, nb, match, weights, de, dnb);
    const double h = 1e-6;
    for (std::size_t i = 0; i < e.size(); ++i) {
        for (int which = 0; which < 2; ++which) {
            Tensor<double> a = e, b = nb;
            Tensor<double>& t = which == 0 ? a : b;
            t[i] += h;
            const auto [lp, ap] = loss(a, b);
            t[i] -= 2 * h;
            const auto [lm, am] = loss(a, b);
            if (ap != match.argmin || am != match.argmin) continue;  // crossed a switch of the min
            const double fd = (lp - lm) / (2 * h);
            ASSERT_NEAR(fd, which == 0 ? de[i] : dnb[i], 1e-7);
        }
    }
}

// --- CE block pieces -----------------------------------------------------------

TEST(CEBlock, EmbeddingShape) {
    ModelConfig c;  // base_channels 16, embed_channels 8
    CEBlock<float> ce(c, 1);
    std::mt19937_64 rng(7);
    const auto b = random_tensor<float>({16, 1, 32, 32}, rng);
    EXPECT_EQ(ce.embed(b).shape(), (Shape{8, 1, 32, 32}));
    const auto wrong = random_tensor<float>({15, 1, 32, 32}, rng);
    EXPECT_THROW(ce.embed(wrong), ConfigError);
}

TEST(CEBlock, IdenticalFeaturesGiveIdenticalEmbeddings) {
    CEBlock<double> ce(small_config(), 2);
    std::mt19937_64 rng(8);
    const auto one = random_tensor<double>({4, 1, 8, 8}, rng);
    Tensor<double> two(4, 2, 8, 8);
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t n = 0; n < 2; ++n) std::copy(one.plane(c, 0).begin(), one.plane(c, 0).end(), two.plane(c, n).begin());
    const auto e = ce.embed(two);
    for (std::size_t c = 0; c < e.channels(); ++c)
        for (std::size_t i = 0; i < e.shape().plane(); ++i) ASSERT_EQ(e.plane(c, 0)[i], e.plane(c, 1)[i]);
}

TEST(CEBlock, RefineConcatenatesEighteenChannels) {
    ModelConfig c;
    CEBlock<float> ce(c, 3);
    std::mt19937_64 rng(9);
    const auto b = random_tensor<float>({16, 1, 32, 32}, rng);
    const auto d = random_tensor<float>({1, 1, 32, 32}, rng, 0.0, 1.0);
    const auto p = random_tensor<float>({1, 1, 32, 32}, rng, 0.0, 1.0);
    const auto out = ce.refine(b, d, p);
    EXPECT_EQ(out.shape(), (Shape{1, 1, 32, 32}));
    std::size_t first_conv_inputs = 0;
    ce.visit_match([&](nn::Parameter<float>& prm) {
        if (prm.name == "ce.match.0.conv.weight") first_conv_inputs = prm.dims[1];
    });
    EXPECT_EQ(first_conv_inputs, 18u);
}

TEST(CEBlockProperty, RefineAndMergeStayInUnitInterval) {
    std::mt19937_64 rng(10);
    for (int t = 0; t < 20; ++t) {
        CEBlock<double> ce(small_config(), rng());
        const double scale = 1.0 + double(t);
        const auto b = random_tensor<double>({4, 2, 8, 8}, rng, -scale, scale);
        const auto d = random_tensor<double>({1, 2, 8, 8}, rng, 0.0, 1.0);
        const auto p = random_tensor<double>({1, 2, 8, 8}, rng, 0.0, 1.0);
        const auto r = ce.refine(b, d, p);
        const auto m = ce.amm_merge(p, r);
        for (double v : r.values()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
        for (double v : m.values()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    }
}

TEST(AmmSqueeze, ChannelMeans) {
    Tensor<double> u(2, 1, 2, 2);
    const double vals[] = {1, 2, 3, 4};
    std::copy(std::begin(vals), std::end(vals), u.plane(0, 0).begin());
    u.plane(1, 0)[0] = u.plane(1, 0)[1] = u.plane(1, 0)[2] = u.plane(1, 0)[3] = 0.7;
    const auto v = CEBlock<double>::amm_squeeze(u);
    EXPECT_DOUBLE_EQ(v(0, 0), 2.5);
    EXPECT_DOUBLE_EQ(v(0, 1), 0.7);
}

TEST(AmmSqueeze, ZeroAndOnePredictions) {
    Tensor<double> u(2, 1, 3, 3, 0.0);
    for (auto& x : u.plane(1, 0)) x = 1.0;
    const auto v = CEBlock<double>::amm_squeeze(u);
    EXPECT_EQ(v(0, 0), 0.0);
    EXPECT_EQ(v(0, 1), 1.0);
}

TEST(AmmScore, ZeroParametersGiveOneHalf) {
    CEBlock<double> ce(small_config(), 4);
    ce.visit_amm([](nn::Parameter<double>& p) { std::fill(p.value.begin(), p.value.end(), 0.0); });
    typename CEBlock<double>::RowMatrix v(1, 2);
    v << 0.3, 0.9;
    const auto s = ce.amm_score(v);
    EXPECT_EQ(s(0, 0), 0.5);
    EXPECT_EQ(s(0, 1), 0.5);
}

TEST(AmmScore, ExpansionFactorSetsLayerShapes) {
    ModelConfig c;
    ASSERT_EQ(c.r, 64);
    CEBlock<float> ce(c, 5);
    std::map<std::string, std::vector<std::size_t>> dims;
    ce.visit_amm([&](nn::Parameter<float>& p) { dims[p.name] = p.dims; });
    EXPECT_EQ(dims.at("ce.amm.fc1.weight"), (std::vector<std::size_t>{128, 2}));
    EXPECT_EQ(dims.at("ce.amm.fc2.weight"), (std::vector<std::size_t>{2, 128}));
    EXPECT_EQ(dims.at("ce.amm.fc1.bias"), (std::vector<std::size_t>{128}));
    EXPECT_EQ(dims.at("ce.amm.fc2.bias"), (std::vector<std::size_t>{2}));
}

TEST(AmmScore, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(13);
    nn::Linear<double> fc1("fc1", 2, 8, rng), fc2("fc2", 8, 2, rng);
    typename nn::Linear<double>::RowMatrix v(3, 2), w(3, 2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        v.data()[i] = u(rng);
        w.data()[i] = u(rng) - 0.5;
    }
    typename nn::Linear<double>::RowMatrix hidden;
    auto loss = [&](bool grad) {
        hidden = fc1.forward(v);
        const auto h = hidden.cwiseMax(0.0).eval();
        const auto s = fc2.forward(h).unaryExpr([](double z) { return nn::sigmoid(z); }).eval();
        if (grad) {
            const auto dz = (w.array() * s.array() * (1.0 - s.array())).matrix().eval();
            const auto dh = fc2.backward(dz);
            fc1.backward((dh.array() * (hidden.array() > 0.0).cast<double>()).matrix());
        }
        return (w.array() * s.array()).sum();
    };
    auto regime = [&] {
        std::vector<int> r;
        for (Eigen::Index i = 0; i < hidden.size(); ++i) r.push_back(hidden.data()[i] > 0);
        return r;
    };
    std::vector<nn::Parameter<double>*> params;
    fc1.visit([&](nn::Parameter<double>& p) { params.push_back(&p); });
    fc2.visit([&](nn::Parameter<double>& p) { params.push_back(&p); });
    ceseg::testing::GradCheckOptions opt;
    opt.per_tensor = 64;
    const auto r = ceseg::testing::check_module(params, loss, regime, opt);
    EXPECT_GT(r.informative, 10u);
    EXPECT_LT(r.rel_error, 1e-6);
}

TEST(CEBlock, EmbedHeadGradientOfSumMatchesFiniteDifferences) {
    std::mt19937_64 rng(14);
    nn::ConvStack<double> embed("embed", 4, 3, 3, rng);
    const auto x = random_tensor<double>({4, 2, 8, 8}, rng);
    const auto w = random_tensor<double>({3, 2, 8, 8}, rng, 0.5, 1.5);
    auto loss = [&](bool grad) {
        const auto e = embed.forward(x);
        double s = 0;
        for (std::size_t i = 0; i < e.size(); ++i) s += w[i] * e[i];
        if (grad) embed.backward(w);
        return s;
    };
    auto regime = [&] {
        std::vector<std::int32_t> r;
        embed.append_regime(r);
        return r;
    };
    std::vector<nn::Parameter<double>*> params;
    embed.visit([&](nn::Parameter<double>& p) {
        if (p.learnable) params.push_back(&p);
    });
    ceseg::testing::GradCheckOptions opt;
    opt.per_tensor = 16;
    const auto r = ceseg::testing::check_module(params, loss, regime, opt);
    EXPECT_GT(r.informative, 20u);
    EXPECT_LT(r.rel_error, 1e-6);
}

// --- end to end ---------------------------------------------------------------

TEST(CEForward, ShapesRangesAndCardinality) {
    SegmentationModel<float> m(small_config(), Variant::ce, 21);
    std::mt19937_64 rng(15);
    const auto x = random_tensor<float>({1, 5, 16, 16}, rng);
    const auto out = ce_forward(m, x);
    ASSERT_TRUE(out.ce.has_value());
    EXPECT_EQ(out.final.count(), 5u);
    EXPECT_EQ(out.ce->neighbors, (std::vector<std::size_t>{1, 0, 1, 2, 3}));
    for (float v : out.final.values()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
    for (float v : out.ce->distance.values()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
}

TEST(CEForward, RejectsTooShortStacksAndBaselineModels) {
    SegmentationModel<float> ce(small_config(), Variant::ce, 1);
    EXPECT_THROW(ce_forward(ce, Tensor<float>(1, 1, 16, 16)), InputError);
    SegmentationModel<float> base(small_config(), Variant::baseline, 1);
    EXPECT_THROW(ce_forward(base, Tensor<float>(1, 4, 16, 16)), ConfigError);
}

TEST(CEForward, DeterministicGivenSeed) {
    SegmentationModel<float> a(small_config(), Variant::ce, 33), b(small_config(), Variant::ce, 33);
    std::mt19937_64 rng(16);
    const auto x = random_tensor<float>({1, 4, 16, 16}, rng);
    const auto oa = ce_forward(a, x), ob = ce_forward(b, x);
    for (std::size_t i = 0; i < oa.final.size(); ++i) ASSERT_EQ(oa.final[i], ob.final[i]);
    const auto fa = a.forward(x), fb = b.forward(x);
    for (std::size_t i = 0; i < fa.final.size(); ++i) ASSERT_EQ(fa.final[i], fb.final[i]);
}

TEST(CEForwardProperty, OutputsInUnitIntervalForRandomInputs) {
    std::mt19937_64 rng(17);
    for (int t = 0; t < 10; ++t) {
        SegmentationModel<float> m(small_config(), Variant::ce, rng());
        const double amp = std::pow(10.0, double(t % 4));
        const auto x = random_tensor<float>({1, 3, 8, 8}, rng, -amp, amp);
        const auto out = m.forward(x);
        for (float v : out.final.values()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
        for (float v : out.ce->distance.values()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
        for (float v : out.ce->embedding.values()) ASSERT_TRUE(std::isfinite(v));
    }
}

// End-to-end check of every group. The 8x8 instance uses depth 2 so the
// matching, AMM and final convs are each checked on 8x8 maps.
TEST(CEGradient, EveryGroupMatchesFiniteDifferencesOn8x8) {
    ModelConfig c = small_config();
    SegmentationModel<double> m(c, Variant::ce, 5);
    std::mt19937_64 rng(18);
    const auto x = random_tensor<double>({1, 2, 8, 8}, rng);
    Tensor<double> y(1, 2, 8, 8);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = (i / 8 % 8 >= 2 && i / 8 % 8 < 6 && i % 8 >= 3) ? 1.0 : 0.0;
    const auto results = ceseg::testing::check_gradients(m, x, y);
    ASSERT_EQ(results.size(), 5u);
    for (const auto& r : results) {
        EXPECT_GT(r.checked, 0u) << to_string(r.group);
        EXPECT_LT(r.rel_error, 1e-4) << to_string(r.group);
    }
}
