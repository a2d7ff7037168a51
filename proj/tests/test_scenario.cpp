#include <gtest/gtest.h>

#include <sstream>

#include "czlab/scenario.hpp"

using namespace czlab;

namespace {

Scenario parse(const std::string& text) {
    std::istringstream in(text);
    return Scenario::from_doc(ConfigDoc::parse(in));
}

std::string field_of(const std::string& text) {
    try {
        parse(text);
    } catch (const ConfigError& e) {
        return e.field;
    }
    return "";
}

}  // namespace

TEST(ConfigDoc, TablesCommentsAndTypes) {
    std::istringstream in(
        "# leading comment\n"
        "p1 = 1.5   # trailing\n"
        "arith = \"float\"\n"
        "seeds = [1, 2, 3]\n"
        "[measure]\n"
        "name = \"cantor-third\"\n"
        "m = 6\n"
        "[outputs]\n"
        "pairs_csv = true\n"
        "dir = \"out#1\"\n");
    ConfigDoc d = ConfigDoc::parse(in);
    EXPECT_DOUBLE_EQ(d.num("p1", 0), 1.5);
    EXPECT_EQ(d.str("measure.name", ""), "cantor-third");
    EXPECT_EQ(d.integer("measure.m", 0), 6);
    EXPECT_TRUE(d.flag("outputs.pairs_csv", false));
    EXPECT_EQ(d.str("outputs.dir", ""), "out#1");
    EXPECT_EQ(d.array("seeds", {}), (std::vector<double>{1, 2, 3}));
    EXPECT_THROW(d.num("arith", 0), ConfigError);
}

TEST(ConfigDoc, SyntaxErrorsNameTheLine) {
    std::istringstream bad("p1 = 2\nnonsense\n");
    try {
        ConfigDoc::parse(bad, "s.toml");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.field, "s.toml:2");
    }
    std::istringstream unterminated("[measure\n");
    EXPECT_THROW(ConfigDoc::parse(unterminated), ConfigError);
}

TEST(Scenario, DefaultsAndDualExponent) {
    Scenario s = parse("p1 = 1.5\n");
    EXPECT_DOUBLE_EQ(s.p2, 3.0);
    EXPECT_FALSE(s.p2_overridden);
    EXPECT_EQ(s.arith, Arith::rational);
    EXPECT_EQ(s.seeds, (std::vector<std::uint64_t>{1}));
    EXPECT_DOUBLE_EQ(s.t_exponent, 4.0);
    Scenario o = parse("p1 = 1.5\np2 = 2\n");
    EXPECT_DOUBLE_EQ(o.p2, 2.0);
    EXPECT_TRUE(o.p2_overridden);
}

TEST(Scenario, OverlayKeepsBaseValues) {
    Scenario base = parse("r = 5\nseeds = [4, 5]\n[measure]\nname = \"uniform-2d\"\nm = 3\n");
    std::istringstream in("p1 = 3\n");
    Scenario s = Scenario::from_doc(ConfigDoc::parse(in), base);
    EXPECT_EQ(s.r, 5);
    EXPECT_EQ(s.measure.name, "uniform-2d");
    EXPECT_EQ(s.seeds.size(), 2u);
    EXPECT_DOUBLE_EQ(s.p2, 1.5);
}

TEST(Scenario, ValidationReportsFieldPaths) {
    EXPECT_EQ(field_of("r = 0\n"), "r");
    EXPECT_EQ(field_of("p1 = 1\n"), "p1");
    EXPECT_EQ(field_of("upsilon = 0.3\n"), "upsilon");
    EXPECT_EQ(field_of("eps = 1\n"), "eps");
    EXPECT_EQ(field_of("arith = \"decimal\"\n"), "arith");
    EXPECT_EQ(field_of("seeds = [1.5]\n"), "seeds");
    EXPECT_EQ(field_of("levels = [5, 3]\n"), "levels");
    EXPECT_EQ(field_of("[measure]\nname = \"sphere\"\n"), "measure.name");
    EXPECT_EQ(field_of("[measure]\nname = \"file\"\n"), "measure.path");
    EXPECT_EQ(field_of("[measure]\nm = 2.5\n"), "measure.m");
    EXPECT_EQ(field_of("[kernel]\nname = \"gauss\"\n"), "kernel.name");
    EXPECT_EQ(field_of("r = \"three\"\n"), "r");
    EXPECT_EQ(field_of("r = 3\n"), "");
}

TEST(Scenario, BuildersFromFields) {
    Scenario s = parse("r = 4\n[measure]\nname = \"cantor-third\"\nm = 4\n[kernel]\nname = \"sign-power\"\ns = 0.5\n");
    EXPECT_EQ(build_measure(s.measure).size(), 16u);
    EXPECT_EQ(build_kernel(s.kernel).name, "sign-power");
    GoodnessParams gp = goodness_for(s);
    EXPECT_EQ(gp.r, 4);
    EXPECT_GE(gp.d.get_d(), std::log(2.0) / std::log(3.0));
    EXPECT_TRUE(gp.constraints_hold());
    Scenario u = parse("");
    EXPECT_EQ(goodness_for(u).gamma, Rational(1, 5));
}

TEST(Scenario, BundledScenariosLoad) {
    for (const char* name : {"cantor6-sign.toml", "uniform256-sign.toml", "cantor7-deep.toml"}) {
        Scenario s = Scenario::from_doc(ConfigDoc::load(std::string(CZLAB_SOURCE_DIR) + "/scenarios/" + name));
        EXPECT_FALSE(s.seeds.empty()) << name;
    }
    EXPECT_THROW(ConfigDoc::load("/nonexistent/x.toml"), ConfigError);
}
