#include <gtest/gtest.h>

#include "kicrank/errors.hpp"
#include "kicrank/rng.hpp"
#include "kicrank/verbalizer.hpp"
#include "test_util.hpp"

using namespace kicrank;
using kicrank::testing::TempDir;
using kicrank::testing::write_text;

namespace {

KnowledgeGraph freebase_graph() {
    RawDataset d;
    d.train = {{"/m/friends", "/tv/tv_program/country_of_origin", "/m/usa"},
               {"/m/blanc", "/people/person/spouse_s./people/marriage/type_of_union", "/m/marriage"}};
    d.test = {{"/m/laurel", "/people/person/spouse_s./people/marriage/type_of_union", "/m/marriage"}};
    d.entity_text = {{"/m/friends", "Friends"}, {"/m/usa", "USA"}, {"/m/blanc", "Mel Blanc"},
                     {"/m/marriage", "Marriage"}, {"/m/laurel", "Stan Laurel"}};
    return KnowledgeGraph::build(d);
}

KnowledgeGraph wordnet_graph() {
    RawDataset d;
    d.train = {{"01", "_member_of_domain_usage", "02"}, {"03", "_hypernym", "03"}};
    d.entity_text = {{"01", "red indian"}, {"02", "disparagement"}, {"03", "loop"}};
    d.entity_description = {{"02", "the act of speaking contemptuously of"}};
    return KnowledgeGraph::build(d);
}

Triple t(const KnowledgeGraph& kg, const std::string& h, const std::string& r, const std::string& tl) {
    return {*kg.find_entity(h), *kg.find_relation(r), *kg.find_entity(tl)};
}

}  // namespace

TEST(Relation, FreebaseOfJoin) {
    EXPECT_EQ(verbalize_relation("/tv/tv_program/country_of_origin", Scheme::FreebaseOfJoin),
              "country of origin of tv program of tv");
    EXPECT_EQ(verbalize_relation("/a", Scheme::FreebaseOfJoin), "a");
    EXPECT_EQ(verbalize_relation("//a//b/", Scheme::FreebaseOfJoin), "b of a");
}

TEST(Relation, WordnetInfix) {
    EXPECT_EQ(verbalize_relation("_member_of_domain_usage", Scheme::WordnetInfix), "member of domain usage");
    EXPECT_EQ(verbalize_relation("_hypernym", Scheme::WordnetInfix), "hypernym");
}

TEST(Relation, CleanStringsUnchangedAndIdempotent) {
    for (auto scheme : {Scheme::FreebaseOfJoin, Scheme::WordnetInfix}) {
        EXPECT_EQ(verbalize_relation("plain words", scheme), "plain words");
        const auto once = verbalize_relation("/x_y/z", scheme);
        EXPECT_EQ(verbalize_relation(once, scheme), once);
    }
}

TEST(Relation, OfJoinCountOnSyntheticPaths) {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        std::string raw;
        std::size_t segments = 1 + rng.uniform_index(5), underscores = 0;
        for (std::size_t s = 0; s < segments; ++s) {
            raw += "/";
            const auto words = 1 + rng.uniform_index(3);
            for (std::uint64_t w = 0; w < words; ++w) {
                if (w > 0) {
                    raw += "_";
                    ++underscores;
                }
                raw += "w" + std::to_string(rng.uniform_index(9));
            }
        }
        const auto text = verbalize_relation(raw, Scheme::FreebaseOfJoin);
        std::size_t joins = 0;
        for (auto pos = text.find(" of "); pos != std::string::npos; pos = text.find(" of ", pos + 1)) ++joins;
        EXPECT_EQ(joins, segments - 1) << raw;
        EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), ' ')),
                  2 * (segments - 1) + underscores);
    }
}

TEST(Templates, ValidationAndSubstitution) {
    EXPECT_TRUE(is_valid_template("[T] is the country where the TV program [H] originated from."));
    EXPECT_FALSE(is_valid_template("[T] and [T] of [H]"));
    EXPECT_FALSE(is_valid_template("no placeholders"));
    EXPECT_EQ(apply_template("[T] is the country where the TV program [H] originated from.", "Friends", "USA"),
              "USA is the country where the TV program Friends originated from.");
    EXPECT_EQ(apply_template("[H] loves [T]", "x", "x"), "x loves x");
}

TEST(Freebase, DemonstrationSentence) {
    const auto kg = freebase_graph();
    const auto triple = t(kg, "/m/blanc", "/people/person/spouse_s./people/marriage/type_of_union", "/m/marriage");
    EXPECT_EQ(verbalize_triple(triple, kg, Scheme::FreebaseOfJoin),
              "predict the tail entity [MASK] from the given (Mel Blanc, type of union of marriage of "
              "people of spouse s. of person of people, [MASK]) by completing the sentence \"what is the type "
              "of union of marriage of people of spouse s. of person of people of Mel Blanc? The answer is \". "
              "The answer is Marriage, so the [MASK] is Marriage.");
}

TEST(Freebase, QueryTailAndHeadMissing) {
    const auto kg = freebase_graph();
    const auto r = *kg.find_relation("/people/person/spouse_s./people/marriage/type_of_union");
    const Verbalizer v(kg, Scheme::FreebaseOfJoin);
    const auto tail_q = v.query({Direction::TailMissing, *kg.find_entity("/m/laurel"), r, 0});
    EXPECT_NE(tail_q.find("(Stan Laurel, "), std::string::npos);
    EXPECT_NE(tail_q.find(", [MASK])"), std::string::npos);
    EXPECT_NE(tail_q.find("The answer is"), std::string::npos);

    const auto head_q = v.query({Direction::HeadMissing, *kg.find_entity("/m/marriage"), r, 0});
    EXPECT_EQ(head_q.rfind("predict the head entity [MASK] from the given ([MASK], ", 0), 0u);
    EXPECT_LT(head_q.find("[MASK], type of union"), head_q.find(", Marriage)"));
}

TEST(Freebase, MissingTextFallsBackToId) {
    RawDataset d;
    d.train = {{"/m/x", "/a/b", "/m/y"}};
    const auto kg = KnowledgeGraph::build(d);
    const auto q = verbalize_query({Direction::TailMissing, 0, 0, 1}, kg, Scheme::FreebaseOfJoin);
    EXPECT_NE(q.find("(/m/x, b of a, [MASK])"), std::string::npos);
}

TEST(Freebase, StatementFormTailFirst) {
    const auto kg = freebase_graph();
    const Verbalizer v(kg, Scheme::FreebaseOfJoin);
    EXPECT_EQ(v.statement(t(kg, "/m/friends", "/tv/tv_program/country_of_origin", "/m/usa")),
              "USA is the country of origin of tv program of tv of Friends");
}

TEST(Wordnet, StatementWithDefinitions) {
    const auto kg = wordnet_graph();
    const Verbalizer v(kg, Scheme::WordnetInfix);
    EXPECT_EQ(v.triple(t(kg, "01", "_member_of_domain_usage", "02")),
              "disparagement : the act of speaking contemptuously of. red indian be member of domain usage of "
              "disparagement");
    EXPECT_EQ(v.statement(t(kg, "01", "_member_of_domain_usage", "02")),
              "red indian be member of domain usage of disparagement");
}

TEST(Wordnet, QueryCloze) {
    const auto kg = wordnet_graph();
    const Verbalizer v(kg, Scheme::WordnetInfix);
    const auto r = *kg.find_relation("_member_of_domain_usage");
    EXPECT_NE(v.query({Direction::TailMissing, *kg.find_entity("01"), r, 0})
                  .find("\"red indian be member of domain usage of what? The answer is \""),
              std::string::npos);
    EXPECT_NE(v.query({Direction::HeadMissing, *kg.find_entity("02"), r, 0})
                  .find("\"what be member of domain usage of disparagement? The answer is \""),
              std::string::npos);
}

TEST(Aligned, SubstitutesTemplate) {
    const auto kg = freebase_graph();
    const auto r = *kg.find_relation("/tv/tv_program/country_of_origin");
    const Verbalizer v(kg, Scheme::Aligned, {{r, "[T] is the country where the TV program [H] originated from."}});
    const auto triple = t(kg, "/m/friends", "/tv/tv_program/country_of_origin", "/m/usa");
    EXPECT_EQ(v.triple(triple), "USA is the country where the TV program Friends originated from.");
    const auto text = v.triple(triple);
    EXPECT_EQ(text.find("[H]"), std::string::npos);
    EXPECT_EQ(text.find("[T]"), std::string::npos);
    EXPECT_NE(v.query({Direction::TailMissing, *kg.find_entity("/m/friends"), r, 0})
                  .find("\"what is the country where the TV program Friends originated from? The answer is \""),
              std::string::npos);
}

TEST(Aligned, SelfLoopFillsBothSlots) {
    const auto kg = wordnet_graph();
    const auto r = *kg.find_relation("_hypernym");
    const Verbalizer v(kg, Scheme::Aligned, {{r, "[H] is a kind of [T]"}});
    EXPECT_EQ(v.triple(t(kg, "03", "_hypernym", "03")), "loop is a kind of loop");
}

TEST(Aligned, MissingTemplateThrows) {
    const auto kg = freebase_graph();
    const Verbalizer v(kg, Scheme::Aligned);
    EXPECT_THROW(v.triple(t(kg, "/m/friends", "/tv/tv_program/country_of_origin", "/m/usa")), ConfigError);
}

TEST(Aligned, TemplateFileRoundTrip) {
    TempDir dir;
    const auto kg = freebase_graph();
    AlignedTemplates templates = {{0, "[T] is the country where the TV program [H] originated from."},
                                  {1, "[H] is married via [T]."}};
    save_aligned_templates(dir / "t.tsv", kg, templates);
    EXPECT_EQ(load_aligned_templates(dir / "t.tsv", kg), templates);
}

TEST(Aligned, TemplateFileSkipsBadLines) {
    TempDir dir;
    const auto kg = freebase_graph();
    write_text(dir / "t.tsv",
               "/tv/tv_program/country_of_origin\t[T] from [H]\n/unknown\t[H] x [T]\nbroken line\n"
               "/people/person/spouse_s./people/marriage/type_of_union\tonly [H]\n");
    const auto loaded = load_aligned_templates(dir / "t.tsv", kg);
    ASSERT_EQ(loaded.size(), 1u);
    EXPECT_EQ(loaded.at(0), "[T] from [H]");
}

TEST(Scheme, ParseAndPrint) {
    for (auto s : {Scheme::FreebaseOfJoin, Scheme::WordnetInfix, Scheme::Aligned}) {
        EXPECT_EQ(parse_scheme(to_string(s)), s);
    }
    EXPECT_THROW(parse_scheme("bogus"), ConfigError);
}
