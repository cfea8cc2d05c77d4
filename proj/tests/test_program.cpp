#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "divex/io.hpp"
#include "divex/program.hpp"

using namespace divex;

namespace {

std::string corpus(const std::string& name) {
  return io::read_text_file(std::string(DIVEX_CORPUS_DIR) + "/" + name);
}

bool has_error(const std::vector<prog::Diagnostic>& ds, const std::string& code) {
  for (const auto& d : ds)
    if (d.code == code && d.severity == prog::Severity::Error) return true;
  return false;
}

const std::vector<std::string> kCorpus = {
    "loop_sum.asm",   "fibonacci.asm", "string_copy.asm", "call_chain.asm",
    "table_walk.asm", "shared_out.asm", "frag_afx.asm",
};

}  // namespace

TEST_CASE("six-instruction single-block program parses into one function") {
  auto res = prog::parse(corpus("frag_afx.asm"));
  REQUIRE(res.ok());
  const auto& p = *res.program;
  REQUIRE(p.functions.size() == 1);
  REQUIRE(p.functions[0].blocks.size() == 2);
  CHECK(p.functions[0].blocks[0].instrs.size() == 6);  // the A..F block
  CHECK(p.functions[0].blocks[0].terminator == prog::Terminator::Fallthrough);
  CHECK(p.functions[0].blocks[1].instrs.size() == 1);  // halt continuation
}

TEST_CASE("empty source yields a missing-entry diagnostic") {
  auto res = prog::parse("");
  CHECK(!res.ok());
  CHECK(has_error(res.diagnostics, "no-entry"));
}

TEST_CASE("whole corpus parses and validates with zero errors") {
  for (const auto& name : kCorpus) {
    CAPTURE(name);
    auto res = prog::parse(corpus(name));
    REQUIRE(res.ok());
    auto diags = prog::validate(*res.program);
    for (const auto& d : diags) {
      CAPTURE(d.message);
      CHECK(d.severity != prog::Severity::Error);
    }
  }
}

TEST_CASE("pretty-print / reparse is a fixed point across the corpus") {
  for (const auto& name : kCorpus) {
    CAPTURE(name);
    auto first = prog::parse(corpus(name));
    REQUIRE(first.ok());
    std::string printed = prog::pretty_print(*first.program);
    auto second = prog::parse(printed);
    REQUIRE(second.ok());
    CHECK(prog::pretty_print(*second.program) == printed);
  }
}

TEST_CASE("diagnostics carry distinct codes") {
  CHECK(has_error(prog::parse(".entry main\n.func main\n    frobnicate r1\n").diagnostics,
                  "unknown-mnemonic"));
  CHECK(has_error(prog::parse(".entry main\n.func main\n    add r1, r2\n").diagnostics,
                  "malformed-operand"));
  CHECK(has_error(prog::parse(".entry main\n.func main\n    ldi r1, 0\nx:\n    halt\nx:\n    halt\n")
                      .diagnostics,
                  "duplicate-label"));
  auto undef = prog::parse(".entry main\n.func main\n    beq nowhere\nnext:\n    halt\n");
  REQUIRE(undef.ok());  // parses; target resolution is a validate() concern
  CHECK(has_error(prog::validate(*undef.program), "undefined-target"));
}

TEST_CASE("unreachable blocks warn rather than error") {
  auto res = prog::parse(
      ".entry main\n.func main\n    halt\nisland:\n    ldi r1, 1\nmore:\n    halt\n");
  REQUIRE(res.ok());
  auto diags = prog::validate(*res.program);
  bool warned = false;
  for (const auto& d : diags) {
    CHECK(d.severity == prog::Severity::Warning);
    warned |= d.code == "unreachable-block";
  }
  CHECK(warned);
}

TEST_CASE("instruction after a terminator requires a label") {
  auto res = prog::parse(".entry main\n.func main\n    jmp main\n    ldi r1, 1\n");
  CHECK(has_error(res.diagnostics, "unlabeled-block"));
}

TEST_CASE("terminator placement is enforced at block end") {
  auto res = prog::parse(".entry main\n.func main\n    ldi r1, 1\n");
  REQUIRE(res.ok());
  CHECK(has_error(prog::validate(*res.program), "fallthrough-off-end"));
}

TEST_CASE("instruction id enumeration is deterministic and stable") {
  auto a = prog::parse(corpus("loop_sum.asm"));
  auto b = prog::parse(corpus("loop_sum.asm"));
  REQUIRE(a.ok());
  REQUIRE(b.ok());
  auto ia = a.program->all_instr_ids();
  auto ib = b.program->all_instr_ids();
  REQUIRE(ia.size() == ib.size());
  CHECK(ia == ib);
  CHECK(a.program->instr_count() == ia.size());
  for (std::size_t i = 1; i < ia.size(); ++i) CHECK(ia[i - 1] < ia[i]);
}

TEST_CASE("data directives parse sizes and init words") {
  auto res = prog::parse(corpus("table_walk.asm"));
  REQUIRE(res.ok());
  const auto& objs = res.program->data_objects;
  REQUIRE(objs.size() == 3);
  CHECK(objs[0].name == "table");
  CHECK(objs[0].size == 24);
  CHECK(objs[0].init == std::vector<std::uint32_t>{3, 1, 4, 1, 5, 9});
  CHECK(*res.program->object_ordinal("walk_out") == 1);
  CHECK(has_error(prog::parse(".data x 3\n").diagnostics, "bad-data-size"));
  CHECK(has_error(prog::parse(".data x 4 1 2\n").diagnostics, "init-overflow"));
}
