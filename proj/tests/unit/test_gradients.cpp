#include "gradcheck.hpp"

#include <doctest.h>

using namespace etcn;
using namespace etcn::test;

namespace {

void require_all_below(const std::vector<GradCheck>& checks, double tolerance) {
    for (const auto& c : checks) {
        INFO(c.name << " max relative error " << c.max_relative_error << " over " << c.entries << " entries");
        CHECK(c.entries > 0);
        CHECK(c.max_relative_error < tolerance);
    }
}

}  // namespace

TEST_CASE("layer gradients match central finite differences") {
    for (std::uint64_t seed : {1u, 2u, 3u}) require_all_below(layer_gradient_checks(seed), 1e-4);
}

TEST_CASE("composed network gradients match finite differences for every variant") {
    for (Variant v : {Variant::Tcn, Variant::TcnSa, Variant::TcnRes2, Variant::TcnSaRes1, Variant::Etcn}) {
        for (std::uint64_t seed : {11u, 12u}) {
            const auto checks = network_gradient_checks(v, seed);
            CHECK(checks.size() > 8);
            require_all_below(checks, 1e-4);
        }
    }
}

TEST_CASE("the finite-difference probe detects a wrong gradient") {
    Matrix p = Matrix::Constant(2, 2, 1.0);
    const Matrix wrong = Matrix::Constant(2, 2, 1.0);  // true gradient is 2 p
    const auto r = check_tensor("probe", p, wrong, [&] { return p.squaredNorm(); });
    CHECK(r.max_relative_error == doctest::Approx(0.5));
}
