#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "lsic/checkpoint.hpp"
#include "lsic/config.hpp"

using namespace lsic;

TEST_CASE("config parses dotted keys, comments and lists") {
    Config c = Config::parse("# comment\n"
                             "model.resolution = 64\n"
                             "train.stage_epochs = 1,2,3\n"
                             "loss.lambdas = [1, 20, 1]\n"
                             "train.lr = 1e-4\n"
                             "model.spectral_norm = true\n"
                             "data.dir = /tmp/x\n");
    CHECK(c.get_int("model.resolution", 0) == 64);
    CHECK(c.get_int_list("train.stage_epochs", {}) == std::vector<int>{1, 2, 3});
    CHECK(c.get_double_list("loss.lambdas", {})[1] == doctest::Approx(20.0));
    CHECK(c.get_double("train.lr", 0.0) == doctest::Approx(1e-4));
    CHECK(c.get_bool("model.spectral_norm", false));
    CHECK(c.get_string("data.dir", "") == "/tmp/x");
    CHECK(c.get_int("missing.key", 7) == 7);
    CHECK_THROWS(Config::parse("novalue\n"));
    CHECK_THROWS(c.get_int("data.dir", 0));
}

TEST_CASE("overrides replace file values; serialization is sorted and stable") {
    Config c = Config::parse("a.x = 1\nb.y = 2\n");
    c.apply_override("a.x=5");
    CHECK(c.get_int("a.x", 0) == 5);
    CHECK(c.serialize() == "a.x = 5\nb.y = 2\n");
    CHECK_THROWS(c.apply_override("nonsense"));
}

TEST_CASE("model compatibility compares only model.* keys") {
    Config a = Config::parse("model.resolution = 64\ntrain.lr = 1e-4\n");
    Config b = Config::parse("model.resolution = 64\ntrain.lr = 5e-4\n");
    Config c = Config::parse("model.resolution = 128\n");
    CHECK(a.model_compatible(b));
    CHECK(!a.model_compatible(c));
}

TEST_CASE("checkpoint round-trips tensors, strings and parameters") {
    Checkpoint ck;
    ck.config_text = "model.resolution = 64\n";
    ad::Parameter p("layer.w", Tensor(std::vector<int>{2, 3}, {1, 2, 3, 4, 5, 6}));
    p.m = Tensor(std::vector<int>{2, 3}, {.1, .2, .3, .4, .5, .6});
    p.v = Tensor(std::vector<int>{2, 3}, {.9, .8, .7, .6, .5, .4});
    ck.put_params({&p});
    ck.put_string("stage", "harmony");
    ck.put_tensor("extra", Tensor::scalar(42.0));
    ck.save("ck_test.bin");

    Checkpoint in = Checkpoint::load("ck_test.bin");
    CHECK(in.config_text == ck.config_text);
    CHECK(in.string_or("stage", "") == "harmony");
    CHECK(in.tensor("extra").item() == 42.0);

    ad::Parameter q("layer.w", Tensor::zeros({2, 3}));
    in.restore_params({&q});
    CHECK(q.value.data == p.value.data);
    CHECK(q.m.data == p.m.data);
    CHECK(q.v.data == p.v.data);

    ad::Parameter wrong("layer.w", Tensor::zeros({3, 2}));
    CHECK_THROWS(in.restore_params({&wrong}));
    ad::Parameter missing("other.w", Tensor::zeros({2, 3}));
    CHECK_THROWS(in.restore_params({&missing}));
    std::remove("ck_test.bin");
}

TEST_CASE("checkpoint rejects corrupt files") {
    {
        std::ofstream out("junk.bin", std::ios::binary);
        out << "NOTACKPT blah";
    }
    CHECK_THROWS(Checkpoint::load("junk.bin"));
    CHECK_THROWS(Checkpoint::load("absent.bin"));
    std::remove("junk.bin");
}
