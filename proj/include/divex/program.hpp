#ifndef DIVEX_PROGRAM_HPP
#define DIVEX_PROGRAM_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "divex/isa.hpp"

namespace divex::prog {

struct SourceLoc {
  int line = 0;
  int col = 0;
};

enum class Severity { Error, Warning };

struct Diagnostic {
  Severity severity = Severity::Error;
  std::string code;  // stable identifier, e.g. "undefined-target"
  std::string message;
  SourceLoc loc;
};

// Layout-free instruction: control transfers name labels, address
// materialization names data objects. Displacements appear only after layout.
struct ProgInstr {
  isa::Opcode opcode = isa::Opcode::NOP;
  std::optional<unsigned> dst;
  std::optional<unsigned> src1;
  std::optional<unsigned> src2;
  std::optional<std::int32_t> immediate;
  std::optional<std::string> addr_object;  // ldi rX, &object
  std::optional<std::string> target;       // branch/jmp block label, call function name
  SourceLoc loc;

  isa::InstrKind kind() const { return isa::Instruction{opcode}.kind(); }
};

enum class Terminator { Fallthrough, Branch, Jump, Call, Ret, Halt };

struct BasicBlock {
  std::string label;
  std::vector<ProgInstr> instrs;  // non-empty after parsing
  Terminator terminator = Terminator::Fallthrough;
};

struct Function {
  std::string name;
  std::vector<BasicBlock> blocks;  // blocks[0] is the entry block, label == name
};

struct DataObject {
  std::string name;
  std::uint32_t size = 0;           // bytes, multiple of the word size
  std::vector<std::uint32_t> init;  // leading words; rest zero
  SourceLoc loc;
};

// Stable identity of a logical instruction across every replica.
struct LogicalInstrId {
  std::uint32_t func = 0;
  std::uint32_t block = 0;
  std::uint32_t index = 0;
  auto operator<=>(const LogicalInstrId&) const = default;
};

struct LogicalProgram {
  std::vector<Function> functions;
  std::vector<DataObject> data_objects;
  std::string entry;

  const Function* find_function(const std::string& name) const;
  const BasicBlock* find_block(std::uint32_t f, std::uint32_t b) const;
  const ProgInstr* find_instr(const LogicalInstrId& id) const;
  std::optional<std::uint32_t> object_ordinal(const std::string& name) const;
  std::string id_string(const LogicalInstrId& id) const;
  // Deterministic enumeration in declaration order.
  std::vector<LogicalInstrId> all_instr_ids() const;
  std::size_t instr_count() const;
};

struct ParseResult {
  std::optional<LogicalProgram> program;  // present iff no errors
  std::vector<Diagnostic> diagnostics;
  bool ok() const { return program.has_value(); }
};

ParseResult parse(const std::string& source);

// Post-parse checks: target resolution, reachability, terminator placement.
std::vector<Diagnostic> validate(const LogicalProgram& p);

// Canonical textual form; parse(pretty_print(p)) reproduces p exactly.
std::string pretty_print(const LogicalProgram& p);

}  // namespace divex::prog

#endif
