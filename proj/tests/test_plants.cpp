#include <catch2/catch_amalgamated.hpp>

#include "rmbil/plants.hpp"

using namespace rmbil;

namespace {

Vec rand_state(const PlantSpec& p, Rng& rng) {
    Vec x(p.n);
    for (std::size_t i = 0; i < p.n; ++i)
        x[i] = rng.uniform(0.5 * p.state_lo[i], 0.5 * p.state_hi[i]);
    return x;
}

}  // namespace

TEST_CASE("scalar plant derivative at pinned point") {
    const PlantSpec p = make_plant("scalar");
    const Vec dx = plant_deriv(p, {}, {0.0}, {1.0});
    REQUIRE(dx.size() == 1);
    // -0^3 + (2 + cos 0) * 1
    REQUIRE(dx[0] == 3.0);
}

TEST_CASE("pendulum drift at 30 degrees") {
    const PlantSpec p = make_plant("pendulum");
    const double th = 3.14159265358979323846 / 6.0;
    const Vec dx = plant_deriv(p, {}, {th, 0.0}, {0.0});
    REQUIRE(dx[0] == 0.0);
    REQUIRE_THAT(dx[1], Catch::Matchers::WithinAbs(-4.905, 1e-12));
}

TEST_CASE("point mass slope bias enters the force channel") {
    const PlantSpec p = make_plant("pointmass");
    DisturbanceCfg d;
    d.kind = DisturbanceCfg::Kind::Slope;
    d.slope_bias = {-0.5, 0.0};
    const Vec dx = plant_deriv(p, d, {0.0, 0.0, 0.0, 0.0}, {0.0, 0.0});
    REQUIRE(dx[0] == 0.0);
    REQUIRE(dx[1] == 0.0);
    REQUIRE_THAT(dx[2], Catch::Matchers::WithinAbs(-0.5, 1e-15));
    REQUIRE(dx[3] == 0.0);
}

TEST_CASE("derivative is affine in the control") {
    Rng rng(42);
    for (const char* name : {"scalar", "pendulum", "pointmass"}) {
        const PlantSpec p = make_plant(name);
        for (int rep = 0; rep < 20; ++rep) {
            const Vec x = rand_state(p, rng);
            Vec u1(p.m), u2(p.m);
            for (auto& v : u1) v = rng.uniform(-2.0, 2.0);
            for (auto& v : u2) v = rng.uniform(-2.0, 2.0);
            const double al = rng.uniform(-1.5, 1.5), be = rng.uniform(-1.5, 1.5);

            const Vec f0 = plant_deriv(p, {}, x, Vec(p.m, 0.0));
            const Vec f1 = plant_deriv(p, {}, x, u1);
            const Vec f2 = plant_deriv(p, {}, x, u2);
            Vec mix(p.m);
            for (std::size_t i = 0; i < p.m; ++i) mix[i] = al * u1[i] + be * u2[i];
            const Vec fm = plant_deriv(p, {}, x, mix);
            for (std::size_t i = 0; i < p.n; ++i) {
                const double expect = f0[i] + al * (f1[i] - f0[i]) + be * (f2[i] - f0[i]);
                REQUIRE_THAT(fm[i], Catch::Matchers::WithinAbs(expect, 1e-12));
            }
        }
    }
}

TEST_CASE("states outside the domain bounds are rejected") {
    const PlantSpec p = make_plant("scalar");
    REQUIRE_THROWS_AS(plant_deriv(p, {}, {3.5}, {0.0}), DomainError);
    REQUIRE_NOTHROW(plant_deriv(p, {}, {3.0}, {0.0}));
    const PlantSpec q = make_plant("pendulum");
    REQUIRE_THROWS_AS(plant_deriv(q, {}, {0.0, 9.0}, {0.0}), DomainError);
}

TEST_CASE("proportional virtual input") {
    const Vec nu = linear_feedback({10.0, 10.0}, {1.2, 0.0}, {1.0, 0.0});
    REQUIRE_THAT(nu[0], Catch::Matchers::WithinAbs(2.0, 1e-15));
    REQUIRE(nu[1] == 0.0);
    const Vec zero = linear_feedback({5.0}, {0.7}, {0.7});
    REQUIRE(zero[0] == 0.0);
}

TEST_CASE("inversion on a scalar linear system") {
    // ẋ = -x + 2u, so at any x: a = -x, G = 2, u = (ν - a) / 2.
    const Vec u = ndi_from_affine({-1.0}, {2.0}, 1, 1, {5.0});
    REQUIRE(u.size() == 1);
    REQUIRE_THAT(u[0], Catch::Matchers::WithinAbs(3.0, 1e-15));
}

TEST_CASE("pendulum inversion holds the arm against gravity") {
    const PlantSpec p = make_plant("pendulum");
    const double th = 3.14159265358979323846 / 6.0;
    const Vec u = ndi_oracle(p, {th, 0.0}, {0.0, 0.0});
    REQUIRE(u.size() == 1);
    REQUIRE_THAT(u[0], Catch::Matchers::WithinAbs(4.905, 1e-12));
}

TEST_CASE("inversion cancels the dynamics on actuated rows") {
    Rng rng(7);
    for (const char* name : {"scalar", "pendulum", "pointmass"}) {
        const PlantSpec p = make_plant(name);
        for (int rep = 0; rep < 20; ++rep) {
            const Vec x = rand_state(p, rng);
            Vec nu(p.n);
            for (auto& v : nu) v = rng.uniform(-1.0, 1.0);
            const Vec u = ndi_oracle(p, x, nu);
            const Vec dx = plant_deriv(p, {}, x, u);
            if (p.family == PlantFamily::Scalar) {
                REQUIRE_THAT(dx[0], Catch::Matchers::WithinAbs(nu[0], 1e-12));
            } else if (p.family == PlantFamily::Pendulum) {
                REQUIRE(dx[0] == x[1]);  // kinematic row untouched
                REQUIRE_THAT(dx[1], Catch::Matchers::WithinAbs(nu[1], 1e-12));
            } else {
                REQUIRE(dx[0] == x[2]);
                REQUIRE(dx[1] == x[3]);
                REQUIRE_THAT(dx[2], Catch::Matchers::WithinAbs(nu[2], 1e-12));
                REQUIRE_THAT(dx[3], Catch::Matchers::WithinAbs(nu[3], 1e-12));
            }
        }
    }
}

TEST_CASE("switching term sign and magnitude") {
    REQUIRE(sgn(0.5) == 1.0);
    REQUIRE(sgn(-0.3) == -1.0);
    REQUIRE(sgn(0.0) == 0.0);

    // Point mass: the force rows of sigma map through G⁺ as mass * Ks * sgn.
    const PlantSpec p = make_plant("pointmass");
    const Vec x(4, 0.0);
    const Vec nu(4, 0.0);
    SwitchingState sw;
    sw.sigma = {0.0, 0.0, 0.5, -0.3};
    sw.ks = {2.0, 2.0, 2.0, 2.0};
    const Vec u_rn = smc_oracle(p, x, nu, sw);
    const Vec u_ndi = ndi_oracle(p, x, nu);
    REQUIRE_THAT(u_rn[0] - u_ndi[0], Catch::Matchers::WithinAbs(2.0, 1e-13));
    REQUIRE_THAT(u_rn[1] - u_ndi[1], Catch::Matchers::WithinAbs(-2.0, 1e-13));
}

TEST_CASE("robust control reduces to plain inversion on the manifold") {
    Rng rng(11);
    for (const char* name : {"scalar", "pendulum", "pointmass"}) {
        const PlantSpec p = make_plant(name);
        const Vec x = rand_state(p, rng);
        Vec nu(p.n);
        for (auto& v : nu) v = rng.uniform(-1.0, 1.0);
        SwitchingState sw;
        sw.sigma = Vec(p.n, 0.0);
        sw.ks = Vec(p.n, 1.5);
        const Vec u_rn = smc_oracle(p, x, nu, sw);
        const Vec u_ndi = ndi_oracle(p, x, nu);
        for (std::size_t i = 0; i < p.m; ++i) REQUIRE(u_rn[i] == u_ndi[i]);
    }
}

TEST_CASE("robust control matches its single-expression form") {
    Rng rng(13);
    const PlantSpec p = make_plant("pendulum");
    for (int rep = 0; rep < 20; ++rep) {
        const Vec x = rand_state(p, rng);
        Vec nu(p.n);
        for (auto& v : nu) v = rng.uniform(-1.0, 1.0);
        SwitchingState sw;
        sw.sigma = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
        sw.ks = {0.8, 1.7};
        const Vec u_rn = smc_oracle(p, x, nu, sw);

        Vec adj = nu;
        for (std::size_t i = 0; i < p.n; ++i) adj[i] += sw.ks[i] * sgn(sw.sigma[i]);
        const Vec direct =
            ndi_from_affine(plant_drift(p, x), plant_input_matrix(p, x), p.n, p.m, adj);
        for (std::size_t i = 0; i < p.m; ++i)
            REQUIRE_THAT(u_rn[i], Catch::Matchers::WithinAbs(direct[i], 1e-13));
    }
}

TEST_CASE("inversion with proportional feedback contracts to a setpoint") {
    const PlantSpec p = make_plant("scalar");
    const Vec gain = {1.0};
    const Vec x_des = {0.5};
    Vec x = {1.8};
    double prev = std::abs(x_des[0] - x[0]);
    for (int i = 0; i < 200; ++i) {
        const Vec u = ndi_oracle(p, x, linear_feedback(gain, x_des, x));
        x = plant_step(p, {}, x, u, p.dt);
        const double err = std::abs(x_des[0] - x[0]);
        REQUIRE(err < prev);
        prev = err;
    }
    REQUIRE(prev < 1e-3);
}

TEST_CASE("switching term rejects a constant control bias") {
    const PlantSpec p = make_plant("scalar");
    DisturbanceCfg d;
    d.kind = DisturbanceCfg::Kind::Slope;
    d.slope_bias = {0.3};
    const Vec gain = {1.0};
    const Vec x_des = {0.5};

    auto steady_err = [&](bool robust) {
        Vec x = {0.0};
        for (int i = 0; i < 500; ++i) {
            const Vec nu = linear_feedback(gain, x_des, x);
            Vec u;
            if (robust) {
                SwitchingState sw;
                sw.sigma = vec_sub(x_des, x);
                sw.ks = {1.2};
                u = smc_control(p, x, nu, sw, 0.01);
            } else {
                u = ndi_oracle(p, x, nu);
            }
            x = plant_step(p, d, x, u, p.dt);
        }
        return std::abs(x_des[0] - x[0]);
    };

    const double e_ndi = steady_err(false);
    const double e_rn = steady_err(true);
    REQUIRE(e_ndi > 0.3);        // plain inversion carries a visible offset
    REQUIRE(e_rn < 0.25 * e_ndi);
}

TEST_CASE("terrain bias is a pure function of position") {
    DisturbanceCfg d;
    d.kind = DisturbanceCfg::Kind::Uneven;
    d.uneven_span = 0.5;
    d.uneven_amp = 0.2;
    d.seed = 99;
    const Vec b1 = uneven_bias(d, 2, 0.1);
    const Vec b2 = uneven_bias(d, 2, 0.4);   // same cell
    const Vec b3 = uneven_bias(d, 2, 0.7);   // next cell
    const Vec b4 = uneven_bias(d, 2, -0.1);  // negative cell
    REQUIRE(b1 == b2);
    REQUIRE(b1 != b3);
    REQUIRE(b1 != b4);
    for (double v : b1) REQUIRE(std::abs(v) <= 0.2);

    DisturbanceCfg d2 = d;
    d2.seed = 100;
    REQUIRE(uneven_bias(d2, 2, 0.1) != b1);
}

TEST_CASE("no disturbance matches the nominal derivative bitwise") {
    Rng rng(5);
    const PlantSpec p = make_plant("pendulum");
    DisturbanceCfg none;
    for (int rep = 0; rep < 10; ++rep) {
        const Vec x = rand_state(p, rng);
        const Vec u = {rng.uniform(-2.0, 2.0)};
        REQUIRE(plant_deriv(p, none, x, u) == plant_deriv(p, {}, x, u));
    }
}

TEST_CASE("parameter shift rescales the physics") {
    const PlantSpec p = make_plant("pendulum");
    DisturbanceCfg d;
    d.kind = DisturbanceCfg::Kind::ParamShift;
    d.param_scale = 0.1;
    const Vec x = {0.4, 0.3};
    const Vec u = {1.0};
    const Vec nom = plant_deriv(p, {}, x, u);
    const Vec shifted = plant_deriv(p, d, x, u);
    const PlantSpec q = shifted_plant(p, 0.1);
    const Vec expect = vec_add(plant_drift(q, x),
                               mat_vec(plant_input_matrix(q, x), q.n, q.m, u));
    REQUIRE(shifted == expect);
    REQUIRE(shifted != nom);
}

TEST_CASE("demonstrator tracks a half-unit sine closely") {
    const PlantSpec p = make_plant("scalar");
    ReferenceTraj ref;
    ref.family = p.family;
    ref.comp.push_back({{0.5}, {1.0}, {0.0}});
    ExpertConfig e;
    double sq = 0.0;
    const std::size_t T = 200;
    const Trajectory tr = expert_episode(p, e, ref, T, &sq);
    REQUIRE(tr.states.size() == T);
    REQUIRE(tr.actions.size() == T);
    REQUIRE(tr.s == tr.states[0]);
    const double rms = std::sqrt(sq / static_cast<double>(T));
    REQUIRE(rms < 0.05);
}

TEST_CASE("demo generation is reproducible and well formed") {
    const PlantSpec p = make_plant("pendulum");
    ExpertConfig e;
    const Dataset a = gen_demos(p, e, 5, 80, 123);
    const Dataset b = gen_demos(p, e, 5, 80, 123);
    const Dataset c = gen_demos(p, e, 5, 80, 124);

    REQUIRE(a.trajs.size() == 5);
    for (std::size_t k = 0; k < a.trajs.size(); ++k) {
        REQUIRE(a.trajs[k].states == b.trajs[k].states);
        REQUIRE(a.trajs[k].actions == b.trajs[k].actions);
        REQUIRE(a.trajs[k].states.size() == 80);
        REQUIRE(a.trajs[k].actions.size() == 80);
    }
    REQUIRE(a.norm.state_mean == b.norm.state_mean);
    REQUIRE(a.expert_rms == b.expert_rms);
    REQUIRE(a.trajs[0].states != c.trajs[0].states);

    REQUIRE(a.expert_rms < 0.05);
    for (double s : a.norm.state_std) REQUIRE(s > 0.0);
    for (double s : a.norm.action_std) REQUIRE(s > 0.0);
}

TEST_CASE("demo generation covers every plant") {
    ExpertConfig e;
    for (const char* name : {"scalar", "pendulum", "pointmass"}) {
        const PlantSpec p = make_plant(name);
        const Dataset ds = gen_demos(p, e, 3, 60, 7);
        REQUIRE(ds.n == p.n);
        REQUIRE(ds.m == p.m);
        REQUIRE(ds.expert_rms < 0.05);
        for (const auto& tr : ds.trajs)
            for (const Vec& x : tr.states) REQUIRE(in_domain(p, x));
    }
}
