#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "bppn/data.hpp"
#include "bppn/error.hpp"
#include "bppn/model.hpp"
#include "bppn/prototypes.hpp"
#include "bppn/rng.hpp"
#include "oracles.hpp"

using namespace bppn;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.backbone.height = 16;
    cfg.backbone.width = 16;
    cfg.backbone.stage_channels = {4, 4};  // D = 4, 4x4 feature grid
    cfg.prototype_count = 4;
    return cfg;
}

Dataset tiny_dataset(int per_class, std::uint64_t seed) {
    GenConfig g;
    g.count_pos = per_class;
    g.count_neg = per_class;
    g.height = 16;
    g.width = 16;
    g.radius_min = 2.0f;
    g.radius_max = 4.0f;
    g.seed = seed;
    return generate(g);
}

// a synthetic distance table + matching labels; class 0 images first
struct TableFixture {
    DistanceTable table;
    std::vector<int> labels;
    PrototypeSet ps;
};

TableFixture random_table(int protos_per_class, int images_per_class, Rng& rng) {
    TableFixture fx;
    fx.ps.count = 2 * protos_per_class;
    fx.ps.temperature = 1.0f;
    fx.ps.vectors = Param("p", Tensor({2 * protos_per_class, 2}));
    for (int i = 0; i < 2 * images_per_class; ++i) {
        fx.labels.push_back(i < images_per_class ? 0 : 1);
    }
    fx.table.per_prototype.resize(static_cast<std::size_t>(fx.ps.count));
    for (int m = 0; m < fx.ps.count; ++m) {
        const int cls = fx.ps.class_of(m);
        auto& rows = fx.table.per_prototype[static_cast<std::size_t>(m)];
        for (int i = 0; i < images_per_class; ++i) {
            DistanceRecord rec;
            rec.image_index = cls * images_per_class + i;
            rec.row = 0;
            rec.col = 0;
            rec.distance = uniform_float(rng, 0.0f, 1.0f);
            rows.push_back(rec);
        }
        std::sort(rows.begin(), rows.end(),
                  [](const DistanceRecord& a, const DistanceRecord& b) {
                      if (a.distance != b.distance) return a.distance < b.distance;
                      return a.image_index < b.image_index;
                  });
    }
    return fx;
}

}  // namespace

TEST_CASE("distance table: a prototype equal to a feature vector ranks that image first") {
    ModelState model = ModelState::init(tiny_config(), 61);
    Dataset ds = tiny_dataset(3, 62);
    const auto feats = extract_features(model, ds);
    // plant prototype 0 (class 0) at image 1 position (2,3)
    const Tensor& f = feats[1];
    const int hw = f.dim(1) * f.dim(2);
    for (int c = 0; c < 4; ++c) {
        model.prototypes.vec_mut(0)[c] = f.data[static_cast<std::size_t>(c) * hw + 2 * f.dim(2) + 3];
    }
    const DistanceTable table = build_distance_table(model, ds, feats);
    const auto& rows = table.per_prototype[0];
    REQUIRE(rows.size() == 3);  // one entry per same-class image
    CHECK(rows[0].image_index == 1);
    CHECK(rows[0].distance == doctest::Approx(0.0));
    CHECK(rows[0].row == 2);
    CHECK(rows[0].col == 3);
    // ascending by distance
    CHECK(rows[0].distance <= rows[1].distance);
    CHECK(rows[1].distance <= rows[2].distance);
}

TEST_CASE("distance table distances equal brute-force per-position minima") {
    ModelState model = ModelState::init(tiny_config(), 63);
    Dataset ds = tiny_dataset(3, 64);
    const auto feats = extract_features(model, ds);
    const DistanceTable table = build_distance_table(model, ds, feats);
    for (int m = 0; m < model.prototypes.count; ++m) {
        for (const auto& rec : table.per_prototype[static_cast<std::size_t>(m)]) {
            const Tensor& f = feats[static_cast<std::size_t>(rec.image_index)];
            const int hw = f.dim(1) * f.dim(2);
            double best = 1e300;
            for (int pos = 0; pos < hw; ++pos) {
                double acc = 0.0;
                for (int c = 0; c < 4; ++c) {
                    const double diff = f.data[static_cast<std::size_t>(c) * hw + pos] -
                                        model.prototypes.vec(m)[c];
                    acc += diff * diff;
                }
                best = std::min(best, acc);
            }
            CHECK(rec.distance == best);
        }
    }
}

TEST_CASE("single image per class gives one entry per prototype") {
    ModelState model = ModelState::init(tiny_config(), 65);
    Dataset ds = tiny_dataset(1, 66);
    const DistanceTable table = build_distance_table(model, ds);
    for (const auto& rows : table.per_prototype) CHECK(rows.size() == 1);
}

TEST_CASE("greedy trace from the worked example") {
    // three prototypes share one candidate pool: p1 {A .1, B .2, C .3},
    // p2 {A .05, B .5, C .6}, p3 {A .07, B .09, C .4} -> A, B, C
    TableFixture fx;
    fx.ps.count = 6;
    fx.ps.temperature = 1.0f;
    fx.ps.vectors = Param("p", Tensor({6, 2}));
    // images: class 0 = {0,1,2}, class 1 = {A=3, B=4, C=5}
    fx.labels = {0, 0, 0, 1, 1, 1};
    fx.table.per_prototype.resize(6);
    auto row = [](int img, double d) {
        return DistanceRecord{img, 0, 0, d};
    };
    // class-0 prototypes pair trivially with distinct images
    fx.table.per_prototype[0] = {row(0, 0.1), row(1, 0.2), row(2, 0.3)};
    fx.table.per_prototype[1] = {row(1, 0.1), row(0, 0.2), row(2, 0.3)};
    fx.table.per_prototype[2] = {row(2, 0.1), row(0, 0.2), row(1, 0.3)};
    // the example's pool
    fx.table.per_prototype[3] = {row(3, 0.1), row(4, 0.2), row(5, 0.3)};
    fx.table.per_prototype[4] = {row(3, 0.05), row(4, 0.5), row(5, 0.6)};
    fx.table.per_prototype[5] = {row(3, 0.07), row(4, 0.09), row(5, 0.4)};

    const auto picks = greedy_assign(fx.table, fx.labels, fx.ps);
    CHECK(picks[3].record.image_index == 3);  // p1 -> A
    CHECK(picks[4].record.image_index == 4);  // p2 -> B (A used)
    CHECK(picks[5].record.image_index == 5);  // p3 -> C (A, B used)
}

TEST_CASE("one prototype per class takes its global nearest image") {
    Rng rng = make_rng(67);
    TableFixture fx = random_table(1, 5, rng);
    const auto picks = greedy_assign(fx.table, fx.labels, fx.ps);
    for (int m = 0; m < 2; ++m) {
        CHECK(picks[static_cast<std::size_t>(m)].record.image_index ==
              fx.table.per_prototype[static_cast<std::size_t>(m)].front().image_index);
    }
}

TEST_CASE("skip rule never fires when nearest images are distinct") {
    Rng rng = make_rng(68);
    for (int trial = 0; trial < 20; ++trial) {
        TableFixture fx = random_table(3, 8, rng);
        std::set<int> nearest;
        bool distinct = true;
        for (const auto& rows : fx.table.per_prototype) {
            distinct = distinct && nearest.insert(rows.front().image_index).second;
        }
        if (!distinct) continue;
        const auto greedy = greedy_assign(fx.table, fx.labels, fx.ps);
        const auto plain = nearest_assign(fx.table);
        for (std::size_t m = 0; m < greedy.size(); ++m) {
            CHECK(greedy[m].record.image_index == plain[m].record.image_index);
        }
    }
}

TEST_CASE("greedy matches the step-trace reference on 100 random tables") {
    Rng rng = make_rng(69);
    for (int trial = 0; trial < 100; ++trial) {
        std::uniform_int_distribution<int> protos(1, 4), extra(0, 5);
        const int ppc = protos(rng);
        const int ipc = ppc + extra(rng);
        TableFixture fx = random_table(ppc, ipc, rng);

        // unsorted candidate lists for the reference
        std::vector<std::vector<std::pair<int, double>>> cands(fx.table.per_prototype.size());
        for (std::size_t m = 0; m < fx.table.per_prototype.size(); ++m) {
            for (const auto& rec : fx.table.per_prototype[m]) {
                cands[m].emplace_back(rec.image_index, rec.distance);
            }
            // shuffle so the reference cannot lean on the sort
            std::shuffle(cands[m].begin(), cands[m].end(), rng);
        }
        const auto expect = oracle::greedy_trace(cands);
        const auto got = greedy_assign(fx.table, fx.labels, fx.ps);
        REQUIRE(got.size() == expect.size());
        for (std::size_t m = 0; m < got.size(); ++m) {
            CHECK(got[m].record.image_index == expect[m].image);
            CHECK(got[m].record.distance == expect[m].distance);
        }
        // injectivity and determinism
        std::set<int> used;
        for (const auto& a : got) CHECK(used.insert(a.record.image_index).second);
        const auto again = greedy_assign(fx.table, fx.labels, fx.ps);
        for (std::size_t m = 0; m < got.size(); ++m) {
            CHECK(again[m].record.image_index == got[m].record.image_index);
        }
    }
}

TEST_CASE("fewer images than prototypes errors out, no silent reuse") {
    Rng rng = make_rng(70);
    TableFixture fx = random_table(3, 2, rng);  // 3 prototypes, 2 images per class
    CHECK_THROWS_AS(greedy_assign(fx.table, fx.labels, fx.ps), InsufficientImagesError);
}

TEST_CASE("per-prototype greedy distance is never better than the unconstrained minimum") {
    Rng rng = make_rng(71);
    for (int trial = 0; trial < 50; ++trial) {
        TableFixture fx = random_table(3, 6, rng);
        const auto greedy = greedy_assign(fx.table, fx.labels, fx.ps);
        const auto plain = nearest_assign(fx.table);
        for (std::size_t m = 0; m < greedy.size(); ++m) {
            CHECK(greedy[m].record.distance >= plain[m].record.distance);
        }
    }
}

TEST_CASE("greedy total is bounded below by the optimal injection") {
    Rng rng = make_rng(72);
    for (int trial = 0; trial < 40; ++trial) {
        std::uniform_int_distribution<int> protos(1, 3), images(3, 5);
        const int ppc = protos(rng);     // up to 6 prototypes
        const int ipc = images(rng);     // up to 10 images
        TableFixture fx = random_table(ppc, ipc, rng);
        std::vector<std::vector<std::pair<int, double>>> cands(fx.table.per_prototype.size());
        for (std::size_t m = 0; m < fx.table.per_prototype.size(); ++m) {
            for (const auto& rec : fx.table.per_prototype[m]) {
                cands[m].emplace_back(rec.image_index, rec.distance);
            }
        }
        const double optimal = oracle::best_injection_total(cands);
        double greedy_total = 0.0;
        for (const auto& a : greedy_assign(fx.table, fx.labels, fx.ps)) {
            greedy_total += a.record.distance;
        }
        CHECK(greedy_total >= optimal - 1e-12);
    }
}

TEST_CASE("push postconditions: bitwise copies, distinct provenance, untouched head") {
    ModelState model = ModelState::init(tiny_config(), 73);
    Dataset ds = tiny_dataset(5, 74);
    const std::vector<float> head_before = model.proto_head[0].value.data;
    const auto feats = extract_features(model, ds);
    push_prototypes(model, ds);

    REQUIRE(model.prototypes.pushed());
    std::set<int> images;
    for (int m = 0; m < model.prototypes.count; ++m) {
        const Provenance& pv = model.prototypes.provenance[static_cast<std::size_t>(m)];
        CHECK(images.insert(pv.image_index).second);  // pairwise distinct
        CHECK(ds.samples[static_cast<std::size_t>(pv.image_index)].label ==
              model.prototypes.class_of(m));
        const Tensor& f = feats[static_cast<std::size_t>(pv.image_index)];
        const int hw = f.dim(1) * f.dim(2);
        const int pos = pv.row * f.dim(2) + pv.col;
        for (int c = 0; c < model.prototypes.dim(); ++c) {
            CHECK(model.prototypes.vec(m)[c] == f.data[static_cast<std::size_t>(c) * hw + pos]);
        }
    }
    CHECK(model.proto_head[0].value.data == head_before);
}

TEST_CASE("pushing twice without training is idempotent") {
    ModelState model = ModelState::init(tiny_config(), 75);
    Dataset ds = tiny_dataset(5, 76);
    push_prototypes(model, ds);
    const std::vector<float> vecs = model.prototypes.vectors.value.data;
    const auto prov = model.prototypes.provenance;
    push_prototypes(model, ds);
    CHECK(model.prototypes.vectors.value.data == vecs);
    for (int m = 0; m < model.prototypes.count; ++m) {
        CHECK(model.prototypes.provenance[static_cast<std::size_t>(m)].image_index ==
              prov[static_cast<std::size_t>(m)].image_index);
        CHECK(model.prototypes.provenance[static_cast<std::size_t>(m)].row ==
              prov[static_cast<std::size_t>(m)].row);
        CHECK(model.prototypes.provenance[static_cast<std::size_t>(m)].col ==
              prov[static_cast<std::size_t>(m)].col);
    }
}

TEST_CASE("diversity metrics closed forms") {
    PrototypeSet ps;
    ps.count = 4;
    ps.temperature = 1.0f;
    // two identical per class 0; two orthogonal unit vectors in class 1
    ps.vectors = Param("p", Tensor::from({4, 2}, {0.6f, 0.8f,   //
                                                  0.6f, 0.8f,   //
                                                  1.0f, 0.0f,   //
                                                  0.0f, 1.0f}));
    const DiversityReport rep = diversity_metrics(ps);
    CHECK(rep.cosine[0] == doctest::Approx(0.0));
    CHECK(rep.l2[0] == doctest::Approx(0.0));
    CHECK(rep.cosine[1] == doctest::Approx(1.0));
    CHECK(rep.l2[1] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-6));
    CHECK(rep.l2[1] == doctest::Approx(1.4142).epsilon(1e-4));
}

TEST_CASE("diversity error paths") {
    PrototypeSet two;
    two.count = 2;  // one per class
    two.vectors = Param("p", Tensor({2, 2}, 1.0f));
    CHECK_THROWS_AS(diversity_metrics(two), MetricError);

    PrototypeSet zero;
    zero.count = 4;
    zero.vectors = Param("p", Tensor({4, 2}, 0.0f));  // zero vectors
    CHECK_THROWS_AS(diversity_metrics(zero), MetricError);
}

TEST_CASE("provenance export lists every prototype") {
    ModelState model = ModelState::init(tiny_config(), 77);
    CHECK_THROWS_AS(provenance_csv(model), MissingProvenanceError);
    Dataset ds = tiny_dataset(5, 78);
    push_prototypes(model, ds);
    const std::string csv = provenance_csv(model);
    CHECK(csv.find("prototype,class,image_index,row,col,distance") == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + model.prototypes.count);
}
