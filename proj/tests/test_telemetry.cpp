#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "gridest/telemetry.hpp"

using namespace gridest;
using namespace gridest::telemetry;

namespace {

MeasurementSet small_set() {
    MeasurementSet s;
    auto add = [&](std::int64_t t, const std::string& el, MeasKind k, MeasPhase p, double v,
                   double sig, Source src = Source::SCADA) {
        s.records.push_back({t, k, el, p, v, sig, src});
    };
    add(0, "B2", MeasKind::P_FLOW, MeasPhase::A, 50.0, 1.0);
    add(0, "B2", MeasKind::Q_FLOW, MeasPhase::A, 20.0, 1.0);
    add(0, "B2", MeasKind::V_MAG, MeasPhase::A, 2.38, 0.01);
    add(300, "B2", MeasKind::P_FLOW, MeasPhase::A, 52.0, 1.0);
    add(300, "B2", MeasKind::Q_FLOW, MeasPhase::A, 21.0, 1.0);
    add(300, "B2", MeasKind::V_MAG, MeasPhase::A, 2.37, 0.01);
    s.reindex();
    return s;
}

} // namespace

TEST_CASE("ingest: happy path, bad kind, period indexing") {
    std::string csv =
        "# comment line\n"
        "timestamp,element,kind,phase,value,sigma,unit,source\n"
        "0,B2,V_MAG,a,2.4,0.01,kV,SCADA\n"
        "300,B2,V_MAG,a,2.39,0.01,kV,SCADA\n"
        "600,L1,P_FLOW,abc,150,1.5,kW,SCADA\n";
    auto set = ingest_string(csv);
    CHECK(set.records.size() == 3);
    CHECK(set.period_count() == 3);
    CHECK(set.period_of(300) == 1);
    CHECK(set.check().empty());

    std::string bad = "timestamp,element,kind,phase,value,sigma,unit,source\n0,B2,X,a,1,0.1,kV,SCADA\n";
    CHECK_THROWS_WITH_AS(ingest_string(bad), doctest::Contains("line 2"), InputError);
}

TEST_CASE("ingest: unit normalization and sigma defaults") {
    std::string csv =
        "timestamp,element,kind,phase,value,sigma,unit,source\n"
        "0,B2,V_MAG,a,2400,10,V,SCADA\n"
        "0,B3,P_INJ,a,-50000,,W,SM\n";
    IngestOptions opt;
    NoiseModel nm;
    nm.default_rel = 0.02;
    opt.sigma_defaults = nm;
    auto set = ingest_string(csv, opt);
    CHECK(set.records[0].value == doctest::Approx(2.4));
    CHECK(set.records[0].sigma == doctest::Approx(0.01));
    CHECK(set.records[1].value == doctest::Approx(-50.0));
    CHECK(set.records[1].sigma == doctest::Approx(1.0));  // 2% of 50 kW

    // same row without defaults is rejected
    CHECK_THROWS_AS(ingest_string(csv), InputError);
}

TEST_CASE("emit/ingest round trip reproduces the set exactly") {
    auto s = small_set();
    auto back = ingest_string(emit_csv_string(s));
    CHECK(back == s);
}

TEST_CASE("align_periods: floor binning, ordinals match the division oracle") {
    MeasurementSet s;
    Rng rng(11);
    for (int i = 0; i < 1000; ++i) {
        std::int64_t t = static_cast<std::int64_t>(rng.uniform(0.0, 86400.0));
        s.records.push_back({t, MeasKind::V_MAG, "B" + std::to_string(i), MeasPhase::A, 1.0, 0.01,
                             Source::SCADA});
    }
    s.reindex();
    auto aligned = align_periods(s, 900.0);
    // oracle: records snapped into bin floor(t/900); ordinals follow the
    // sorted distinct occupied bins
    std::set<std::int64_t> bins;
    std::map<std::string, std::int64_t> bin_of;
    for (const auto& r : s.records) {
        std::int64_t b = r.timestamp / 900;
        bins.insert(b);
        bin_of[r.element] = b;
    }
    std::map<std::int64_t, int> ordinal;
    int k = 0;
    for (auto b : bins) ordinal[b] = k++;
    CHECK(aligned.period_count() == static_cast<int>(bins.size()));
    for (const auto& r : aligned.records) {
        int got = aligned.period_of(r.timestamp);
        CHECK(got == ordinal[bin_of[r.element]]);
    }
}

TEST_CASE("align_periods: collision keeps the record nearest the bin center") {
    MeasurementSet s;
    s.records.push_back({299, MeasKind::V_MAG, "B2", MeasPhase::A, 1.0, 0.01, Source::SCADA});
    s.records.push_back({301, MeasKind::V_MAG, "B2", MeasPhase::A, 2.0, 0.01, Source::SCADA});
    s.reindex();
    int collisions = 0;
    auto aligned = align_periods(s, 1000.0, &collisions);  // both in bin 0, center 500
    CHECK(collisions == 1);
    REQUIRE(aligned.records.size() == 1);
    CHECK(aligned.records[0].value == 2.0);  // t=301 is nearer to 500
    CHECK(aligned.records[0].timestamp == 500);
}

TEST_CASE("align_periods: already-aligned set unchanged") {
    MeasurementSet s;
    s.records.push_back({450, MeasKind::V_MAG, "B2", MeasPhase::A, 1.0, 0.01, Source::SCADA});
    s.records.push_back({1350, MeasKind::V_MAG, "B2", MeasPhase::A, 1.1, 0.01, Source::SCADA});
    s.reindex();
    auto aligned = align_periods(s, 900.0);
    CHECK(aligned == s);
}

TEST_CASE("inject_fault: catalog arithmetic") {
    auto s = small_set();
    FaultSpec ct;
    ct.fault_kind = FaultKind::CT_REVERSAL;
    ct.element = "B2";
    auto flipped = inject_fault(s, ct, 1);
    CHECK(flipped.records[0].value == -50.0);
    CHECK(flipped.records[2].value == 2.38);  // V_MAG untouched

    FaultSpec unit;
    unit.fault_kind = FaultKind::UNIT_MISLABEL;
    unit.kind = MeasKind::P_FLOW;
    auto scaled = inject_fault(s, unit, 1);
    CHECK(scaled.records[0].value == doctest::Approx(50000.0));

    FaultSpec outlier;
    outlier.fault_kind = FaultKind::GROSS_OUTLIER;
    outlier.kind = MeasKind::P_FLOW;
    outlier.outlier_k = 10.0;
    auto spiked = inject_fault(s, outlier, 3);
    double delta = 0.0;
    for (size_t i = 0; i < s.records.size(); ++i)
        delta += std::abs(spiked.records[i].value - s.records[i].value);
    CHECK(delta == doctest::Approx(10.0));  // exactly one record moved k*sigma
}

TEST_CASE("inject_fault: involutions") {
    auto s = small_set();
    FaultSpec ct;
    ct.fault_kind = FaultKind::CT_REVERSAL;
    auto twice = inject_fault(inject_fault(s, ct, 5), ct, 6);
    CHECK(twice == s);

    FaultSpec rot;
    rot.fault_kind = FaultKind::PHASE_ROTATION;
    auto thrice = inject_fault(inject_fault(inject_fault(s, rot, 1), rot, 2), rot, 3);
    CHECK(thrice == s);
}

TEST_CASE("inject_fault: interval averaging and threshold reporting") {
    MeasurementSet s;
    for (int t = 0; t < 6; ++t)
        s.records.push_back({t * 300, MeasKind::P_FLOW, "L1", MeasPhase::A, 10.0 * t, 1.0,
                             Source::SCADA});
    s.reindex();

    FaultSpec avg;
    avg.fault_kind = FaultKind::INTERVAL_AVERAGING;
    avg.averaging_window = 3;
    auto a = inject_fault(s, avg, 1);
    CHECK(a.records[0].value == doctest::Approx(10.0));  // mean(0,10,20)
    CHECK(a.records[1].value == doctest::Approx(10.0));
    CHECK(a.records[3].value == doctest::Approx(40.0));  // mean(30,40,50)

    FaultSpec thr;
    thr.fault_kind = FaultKind::THRESHOLD_REPORTING;
    thr.threshold = 15.0;
    auto t = inject_fault(s, thr, 1);
    // 0 -> reported; 10, 20 within 15 of the last report chain
    CHECK(t.records[1].value == 0.0);
    CHECK(t.records[2].value == 20.0);  // |20-0| > 15 -> new report
    CHECK(t.records[3].value == 20.0);
}

TEST_CASE("inject_fault: aggregate-only collapses phases") {
    MeasurementSet s;
    for (auto p : {MeasPhase::A, MeasPhase::B, MeasPhase::C})
        s.records.push_back({0, MeasKind::P_INJ, "B4", p, 10.0, 1.0, Source::SCADA});
    s.reindex();
    FaultSpec agg;
    agg.fault_kind = FaultKind::AGGREGATE_ONLY;
    auto a = inject_fault(s, agg, 1);
    REQUIRE(a.records.size() == 1);
    CHECK(a.records[0].phase == MeasPhase::AGG);
    CHECK(a.records[0].value == doctest::Approx(30.0));
    CHECK(a.records[0].sigma == doctest::Approx(std::sqrt(3.0)));
}

TEST_CASE("add_noise: determinism and distribution moments") {
    auto s = small_set();
    NoiseModel nm;
    auto n1 = add_noise(s, nm, 42);
    auto n2 = add_noise(s, nm, 42);
    CHECK(n1 == n2);
    auto n3 = add_noise(s, nm, 43);
    CHECK_FALSE(n1 == n3);

    // VIRTUAL untouched
    MeasurementSet v;
    v.records.push_back({0, MeasKind::P_INJ, "B3", MeasPhase::A, 0.0, 0.0, Source::VIRTUAL});
    v.reindex();
    CHECK(add_noise(v, nm, 1) == v);

    // Monte Carlo moments over 1e5 draws
    MeasurementSet big;
    big.records.resize(100000);
    for (size_t i = 0; i < big.records.size(); ++i)
        big.records[i] = {0, MeasKind::P_INJ, "B", MeasPhase::A, 0.0, 1.0, Source::SCADA};
    big.reindex();
    auto g = add_noise(big, nm, 7);
    double mean = 0, var = 0;
    for (const auto& r : g.records) mean += r.value;
    mean /= g.records.size();
    for (const auto& r : g.records) var += (r.value - mean) * (r.value - mean);
    var /= g.records.size();
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::sqrt(var) == doctest::Approx(1.0).epsilon(0.02));

    NoiseModel lap;
    lap.distribution = NoiseDistribution::LAPLACE;
    auto l = add_noise(big, lap, 9);
    double lmean = 0, lvar = 0;
    for (const auto& r : l.records) lmean += r.value;
    lmean /= l.records.size();
    for (const auto& r : l.records) lvar += (r.value - lmean) * (r.value - lmean);
    lvar /= l.records.size();
    CHECK(lvar == doctest::Approx(2.0).epsilon(0.05));  // scale b=1 -> var 2 b^2
}
