#include <doctest.h>

#include <algorithm>
#include <random>

#include "featimg/errors.hpp"
#include "featimg/evaluation.hpp"
#include "featimg/io_util.hpp"
#include "support.hpp"

using namespace featimg;

namespace {

MetricsReport i1_motility_report() {
    MetricsReport r;
    r.add({1, TaskKind::Motility, InputStackSpec::I1, 13.330, 28});
    r.add({2, TaskKind::Motility, InputStackSpec::I1, 12.880, 28});
    r.add({3, TaskKind::Motility, InputStackSpec::I1, 12.840, 29});
    r.finalize();
    return r;
}

} // namespace

TEST_CASE("mae of identical triples is zero") {
    const std::vector<Triple> p{{1, 2, 3}, {40, 50, 10}};
    CHECK(mae(p, p) == 0.0);
}

TEST_CASE("mae hand examples") {
    const std::vector<Triple> p{{50, 30, 20}};
    const std::vector<Triple> t{{40, 40, 20}};
    CHECK(mae(p, t) == doctest::Approx(20.0 / 3));
    const std::vector<Triple> p2{{3, 0, 0}, {0, 3, 0}};
    const std::vector<Triple> t2{{0, 0, 0}, {0, 0, 0}};
    CHECK(mae(p2, t2) == doctest::Approx(1.0));
}

TEST_CASE("mae preconditions") {
    const std::vector<Triple> one{{1, 1, 1}};
    const std::vector<Triple> two{{1, 1, 1}, {2, 2, 2}};
    CHECK_THROWS_AS(mae(one, two), PreconditionError);
    CHECK_THROWS_AS(mae(std::vector<Triple>{}, std::vector<Triple>{}), PreconditionError);
    const std::vector<Triple> nan{{std::nan(""), 0, 0}};
    CHECK_THROWS_AS(mae(nan, one), PreconditionError);
}

TEST_CASE("mae is symmetric, permutation and shift invariant") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0, 100);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Triple> p(7), t(7);
        for (int i = 0; i < 7; ++i) {
            p[i] = {u(rng), u(rng), u(rng)};
            t[i] = {u(rng), u(rng), u(rng)};
        }
        const double base = mae(p, t);
        CHECK(mae(t, p) == doctest::Approx(base).epsilon(1e-12));

        std::vector<int> order{0, 1, 2, 3, 4, 5, 6};
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<Triple> ps, ts;
        for (int i : order) {
            ps.push_back(p[i]);
            ts.push_back(t[i]);
        }
        CHECK(mae(ps, ts) == doctest::Approx(base).epsilon(1e-12));

        const double c = u(rng) - 50;
        for (auto& x : ps) for (auto& v : x) v += c;
        for (auto& x : ts) for (auto& v : x) v += c;
        CHECK(mae(ps, ts) == doctest::Approx(base).epsilon(1e-9));
    }
}

TEST_CASE("fold averages of the published table") {
    CHECK(format_3dp(average_folds(std::vector<double>{13.330, 12.880, 12.840})) == "13.017");
    CHECK(format_3dp(average_folds(std::vector<double>{9.462, 9.426, 9.393})) == "9.427");
    CHECK(format_3dp(average_folds(std::vector<double>{5.698, 5.748, 5.698})) == "5.715");
    CHECK_THROWS_AS(average_folds(std::vector<double>{1, 2}), PreconditionError);
    CHECK_THROWS_AS(average_folds(std::vector<double>{1, 2, 3, 4}), PreconditionError);
}

TEST_CASE("three-decimal rounding is half away from zero on the decimal value") {
    CHECK(format_3dp(13.0165) == "13.017");
    CHECK(format_3dp(2.0005) == "2.001");
    CHECK(format_3dp(2.0004999) == "2.000");
    CHECK(format_3dp(-2.0005) == "-2.001");
    CHECK(format_3dp(9.9995) == "10.000");
    CHECK(format_3dp(0.0) == "0.000");
    CHECK(format_3dp(-0.0001) == "0.000");
    CHECK(format_3dp(1e-9) == "0.000");
    CHECK(format_3dp(123456.7) == "123456.700");
    CHECK_THROWS_AS(format_3dp(std::nan("")), PreconditionError);
}

TEST_CASE("three-decimal rounding agrees with an integer oracle") {
    // Values with at most four decimals are exact in decimal; scale by 10^4.
    std::mt19937_64 rng(8);
    for (int i = 0; i < 2000; ++i) {
        const long long units = static_cast<long long>(rng() % 100000000ULL);
        const double value = static_cast<double>(units) / 10000.0;
        const long long rounded = (units + 5) / 10; // thousandths, half up on magnitude
        const std::string expected = std::to_string(rounded / 1000) + "." +
                                     std::string(3 - std::to_string(rounded % 1000).size(), '0') +
                                     std::to_string(rounded % 1000);
        CHECK(format_3dp(value) == expected);
    }
}

TEST_CASE("rendered table shows the I1 motility average") {
    const auto text = render_report(i1_motility_report());
    CHECK(text.find("13.017") != std::string::npos);
    CHECK(text.find("13.330") != std::string::npos);
    CHECK(text.find("Fold 3") != std::string::npos);
    CHECK(text.find("Motility MAE") != std::string::npos);
}

TEST_CASE("empty report lists every missing cell") {
    try {
        render_report(MetricsReport{});
        FAIL("expected IncompleteReportError");
    } catch (const IncompleteReportError& e) {
        CHECK(e.missing().size() == 24);
        CHECK(std::string(e.what()).find("I4/morphology/fold 3") != std::string::npos);
    }
}

TEST_CASE("partial report lists the gaps") {
    MetricsReport r;
    r.cells = {{InputStackSpec::I2, TaskKind::Morphology}};
    r.add({2, TaskKind::Morphology, InputStackSpec::I2, 5.5, 3});
    const auto gaps = r.missing();
    CHECK(gaps == std::vector<CellGap>{{InputStackSpec::I2, TaskKind::Morphology, 1},
                                       {InputStackSpec::I2, TaskKind::Morphology, 3}});
    CHECK_THROWS_AS(render_report(r), IncompleteReportError);
}

TEST_CASE("duplicate and invalid fold results are rejected") {
    auto r = i1_motility_report();
    CHECK_THROWS_AS(r.add({1, TaskKind::Motility, InputStackSpec::I1, 1.0, 1}), ConflictError);
    CHECK_THROWS_AS(r.add({4, TaskKind::Motility, InputStackSpec::I2, 1.0, 1}), ValidationError);
    CHECK_THROWS_AS(r.add({1, TaskKind::Motility, InputStackSpec::I2, -1.0, 1}), ValidationError);
}

TEST_CASE("averages equal the mean of the fold results") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 30);
    MetricsReport r;
    for (const auto& cell : full_grid()) {
        for (int f = 1; f <= 3; ++f) r.add({f, cell.task, cell.spec, u(rng), 10});
    }
    r.finalize();
    CHECK(r.averages.size() == 8);
    for (const auto& [cell, avg] : r.averages) {
        double sum = 0;
        for (int f = 1; f <= 3; ++f) sum += r.find(cell.spec, cell.task, f)->mae;
        CHECK(std::abs(avg - sum / 3) <= 5e-4);
    }
}

TEST_CASE("json export round-trips at full precision") {
    test::TempDir dir;
    auto r = i1_motility_report();
    r.add({1, TaskKind::Motility, InputStackSpec::I4, 1.0 / 3, 5});
    r.add({2, TaskKind::Motility, InputStackSpec::I4, 2.0 / 7, 5});
    r.add({3, TaskKind::Motility, InputStackSpec::I4, 0.1 + 0.2, 5});
    r.config = {{"seed", 1}};
    r.seeds = {{"x", 42}};
    r.finalize();
    save_report(dir / "r.json", r);
    const auto back = load_report(dir / "r.json");
    CHECK(back == r);
    for (const auto& [cell, avg] : r.averages) CHECK(back.averages.at(cell) == avg);
    CHECK(serialize_report(back) == io::read_text(dir / "r.json"));
}

TEST_CASE("tampered report fails its checksum") {
    test::TempDir dir;
    save_report(dir / "r.json", i1_motility_report());
    auto text = io::read_text(dir / "r.json");
    const auto pos = text.find("13.33");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 5, "13.34");
    io::write_atomic(dir / "bad.json", text);
    CHECK_THROWS_AS(load_report(dir / "bad.json"), ChecksumError);
    io::write_atomic(dir / "junk.json", std::string_view("{ not json"));
    CHECK_THROWS_AS(load_report(dir / "junk.json"), ChecksumError);
}

TEST_CASE("csv export keeps full precision") {
    MetricsReport r;
    r.add({1, TaskKind::Morphology, InputStackSpec::I3, 1.0 / 3, 4});
    r.add({2, TaskKind::Morphology, InputStackSpec::I3, 0.5, 4});
    r.add({3, TaskKind::Morphology, InputStackSpec::I3, 0.25, 4});
    const auto csv = report_to_csv(r);
    CHECK(csv.rfind("spec,task,fold,mae,n_videos\n", 0) == 0);
    CHECK(csv.find("I3,morphology,1,0.3333333333333333,4") != std::string::npos);
    CHECK(csv.find("I3,morphology,average,") != std::string::npos);
    const auto line = csv.substr(csv.find("average,") + 8);
    CHECK(io::parse_double(line.substr(0, line.find(','))) == average_folds(std::vector<double>{1.0 / 3, 0.5, 0.25}));
}
