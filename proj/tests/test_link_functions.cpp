#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numbers>

#include "eqloss/link_functions.hpp"

using namespace eqloss;

namespace {

PairSpec pair_of(PairId id) { return make_pair(id, id == PairId::threshold_logistic ? 1.5 : 0.5); }

const PsiNumeric& numeric(PairId id) {
    static std::map<PairId, PsiNumeric> cache;
    auto it = cache.find(id);
    if (it == cache.end()) it = cache.emplace(id, psi_numeric(pair_of(id))).first;
    return it->second;
}

struct PsiRow {
    PairId id;
    double v[4];  // z = 0.1, 0.3, 0.5, 0.9
};

// H^- - H from a brute-force grid plus bounded Brent search in double precision.
const PsiRow psi_ref[] = {
    {PairId::entropy_cross_entropy, {0.0034673491368209, 0.0313247596023995, 0.0877126420622624, 0.294261608065676}},
    {PairId::least_confidence_cross_entropy,
     {0.00242059889237869, 0.0205367719038692, 0.0540988310811233, 0.159761191863775}},
    {PairId::margin_squared_margin, {0.0098373790232289, 0.08580986985146, 0.231435513142098, 0.710137254616803}},
    {PairId::margin_hinge, {0.0810930216216329, 0.243279064864899, 0.405465108108164, 0.729837194594696}},
    {PairId::threshold_logistic, {0.00500836684635686, 0.0457005415253128, 0.130812035941137, 0.416733902577193}},
    {PairId::exponential_exponential, {0.00492980845470492, 0.0437809759217733, 0.122617324698338, 0.454960316009354}},
};
const double zs[] = {0.1, 0.3, 0.5, 0.9};

}  // namespace

TEST(PsiNumeric, MatchesReferenceValues) {
    for (const auto& row : psi_ref) {
        const auto link = numeric(row.id).link();
        for (int i = 0; i < 4; ++i) EXPECT_NEAR(link(zs[i]), row.v[i], 2e-6) << to_string(row.id) << " z=" << zs[i];
    }
}

TEST(PsiNumeric, BasicShape) {
    for (PairId id : all_pairs) {
        const auto& n = numeric(id);
        const auto link = n.link();
        EXPECT_NEAR(link(0.0), 0.0, 1e-12) << to_string(id);
        EXPECT_TRUE(is_classification_calibrated(link)) << to_string(id);
        EXPECT_EQ(link.provenance(), LinkProvenance::numeric);
        for (std::size_t i = 0; i < n.z.size(); ++i) EXPECT_LE(n.envelope(n.z[i]), n.psi_tilde[i] + 1e-12);
    }
}

TEST(PsiClosed, AgreesWithNumericExceptThreshold) {
    for (PairId id : {PairId::entropy_cross_entropy, PairId::least_confidence_cross_entropy,
                      PairId::margin_squared_margin, PairId::margin_hinge, PairId::exponential_exponential}) {
        const auto link = numeric(id).link();
        double sup = 0.0;
        for (double z : linspace(0.0, 0.99, 991)) sup = std::max(sup, std::abs(link(z) - psi_closed(pair_of(id), z)));
        EXPECT_LT(sup, 1e-5) << to_string(id);
    }
}

TEST(PsiClosed, ThresholdFormDiffersFromNumeric) {
    // The numeric link follows h(z) up to tanh(g/2) and is linear beyond, so the
    // closed form's kink does not show up.
    const auto pair = pair_of(PairId::threshold_logistic);
    EXPECT_NEAR(threshold_z0(1.5), 0.24370598120410985783, 1e-14);
    const double zg = std::tanh(0.75);
    EXPECT_NEAR(zg, 0.635148952387287319, 1e-15);
    const auto link = numeric(PairId::threshold_logistic).link();
    const auto h = [](double z) { return 0.5 * ((1 + z) * std::log1p(z) + (1 - z) * std::log1p(-z)); };
    for (double z : {0.1, 0.3, 0.5, 0.6}) EXPECT_NEAR(link(z), h(z), 1e-6);
    EXPECT_GT(std::abs(link(0.9) - psi_closed(pair, 0.9)), 0.1);
    EXPECT_NEAR(link(0.8), 0.5 * (link(0.7) + link(0.9)), 1e-6);
    EXPECT_NEAR(final_segment_start(numeric(PairId::threshold_logistic).envelope), zg, 2.0 / 4096);
    EXPECT_EQ(final_segment_start(numeric(PairId::margin_hinge).envelope), 0.0);
}

TEST(Taylor, ClosedFormsAreHalfTheSecondDerivative) {
    // lim psi(z)/z^2 = psi''(0)/2
    const double expect[] = {std::numbers::ln2 / 2, 0.25, 1.0, 0.5, 0.5};
    const PairId ids[] = {PairId::entropy_cross_entropy, PairId::least_confidence_cross_entropy,
                          PairId::margin_squared_margin, PairId::threshold_logistic, PairId::exponential_exponential};
    for (int i = 0; i < 5; ++i) {
        const auto t = taylor_coefficient(psi_closed_link(pair_of(ids[i])));
        EXPECT_FALSE(t.linear) << to_string(ids[i]);
        EXPECT_NEAR(t.value, expect[i], 1e-5 * expect[i] + 1e-6) << to_string(ids[i]);
    }
}

TEST(Taylor, NumericLinksMatchClosedForms) {
    const double expect[] = {std::numbers::ln2 / 2, 0.25, 1.0, 0.5, 0.5};
    const PairId ids[] = {PairId::entropy_cross_entropy, PairId::least_confidence_cross_entropy,
                          PairId::margin_squared_margin, PairId::threshold_logistic, PairId::exponential_exponential};
    for (int i = 0; i < 5; ++i) {
        const auto t = taylor_coefficient(numeric(ids[i]).link());
        EXPECT_FALSE(t.linear) << to_string(ids[i]);
        EXPECT_NEAR(t.value, expect[i], 0.02 * expect[i]) << to_string(ids[i]);
    }
}

TEST(Taylor, HingeIsLinear) {
    for (double mu : {0.5, 1.0}) {
        const auto pair = make_pair(PairId::margin_hinge, mu);
        const auto t = taylor_coefficient(psi_numeric(pair).link());
        EXPECT_TRUE(t.linear);
        EXPECT_NEAR(t.value, std::log1p(mu) / mu, 0.01 * std::log1p(mu) / mu);
    }
}

TEST(Transfer, InvertsLink) {
    const auto link = psi_closed_link(pair_of(PairId::margin_squared_margin));
    EXPECT_NEAR(transfer_risk(link, link(0.4)), 0.4, 1e-10);
    EXPECT_EQ(transfer_risk(link, 100.0), 1.0);
    EXPECT_EQ(transfer_risk(link, 0.0), 0.0);
    EXPECT_THROW(transfer_risk(link, -1.0), std::invalid_argument);
}

TEST(PsiClosed, Domain) {
    EXPECT_THROW(psi_closed(pair_of(PairId::margin_hinge), 1.5), std::invalid_argument);
    EXPECT_THROW(psi_closed(make_pair(PairId::exponential_exponential, 1.0), 0.5), std::invalid_argument);
}
