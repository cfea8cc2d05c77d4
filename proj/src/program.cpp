#include "divex/program.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <sstream>

namespace divex::prog {

const Function* LogicalProgram::find_function(const std::string& name) const {
  for (const auto& f : functions)
    if (f.name == name) return &f;
  return nullptr;
}

const BasicBlock* LogicalProgram::find_block(std::uint32_t f, std::uint32_t b) const {
  if (f >= functions.size() || b >= functions[f].blocks.size()) return nullptr;
  return &functions[f].blocks[b];
}

const ProgInstr* LogicalProgram::find_instr(const LogicalInstrId& id) const {
  const BasicBlock* bb = find_block(id.func, id.block);
  if (!bb || id.index >= bb->instrs.size()) return nullptr;
  return &bb->instrs[id.index];
}

std::optional<std::uint32_t> LogicalProgram::object_ordinal(const std::string& name) const {
  for (std::uint32_t i = 0; i < data_objects.size(); ++i)
    if (data_objects[i].name == name) return i;
  return std::nullopt;
}

std::string LogicalProgram::id_string(const LogicalInstrId& id) const {
  const Function& f = functions[id.func];
  return f.name + "." + f.blocks[id.block].label + "." + std::to_string(id.index);
}

std::vector<LogicalInstrId> LogicalProgram::all_instr_ids() const {
  std::vector<LogicalInstrId> out;
  for (std::uint32_t f = 0; f < functions.size(); ++f)
    for (std::uint32_t b = 0; b < functions[f].blocks.size(); ++b)
      for (std::uint32_t i = 0; i < functions[f].blocks[b].instrs.size(); ++i)
        out.push_back({f, b, i});
  return out;
}

std::size_t LogicalProgram::instr_count() const { return all_instr_ids().size(); }

namespace {

struct Token {
  std::string text;
  int col = 0;
};

std::vector<Token> tokenize_line(const std::string& line) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < line.size()) {
    char c = line[i];
    if (c == ';' || c == '#') break;  // comment
    if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
      ++i;
      continue;
    }
    if (c == '[' || c == ']' || c == ':' || c == '&') {
      out.push_back({std::string(1, c), int(i) + 1});
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j])) &&
           line[j] != ',' && line[j] != '[' && line[j] != ']' && line[j] != ':' &&
           line[j] != '&' && line[j] != ';' && line[j] != '#')
      ++j;
    out.push_back({line.substr(i, j - i), int(i) + 1});
    i = j;
  }
  return out;
}

bool is_ident(const std::string& s) {
  if (s.empty()) return false;
  if (!std::isalpha(static_cast<unsigned char>(s[0])) && s[0] != '_') return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  });
}

std::optional<unsigned> parse_reg(const std::string& s) {
  if (s == "sp") return isa::kSpReg;
  if (s.size() >= 2 && (s[0] == 'r' || s[0] == 'R')) {
    unsigned v = 0;
    for (std::size_t i = 1; i < s.size(); ++i) {
      if (!std::isdigit(static_cast<unsigned char>(s[i]))) return std::nullopt;
      v = v * 10 + unsigned(s[i] - '0');
      if (v >= 100) return std::nullopt;
    }
    if (v < isa::kNumRegs) return v;
  }
  return std::nullopt;
}

std::optional<std::int64_t> parse_int(const std::string& s) {
  if (s.empty()) return std::nullopt;
  std::size_t pos = 0;
  bool neg = false;
  if (s[0] == '-' || s[0] == '+') {
    neg = s[0] == '-';
    pos = 1;
  }
  if (pos >= s.size()) return std::nullopt;
  int base = 10;
  if (s.size() > pos + 1 && s[pos] == '0' && (s[pos + 1] == 'x' || s[pos + 1] == 'X')) {
    base = 16;
    pos += 2;
    if (pos >= s.size()) return std::nullopt;
  }
  std::int64_t v = 0;
  for (; pos < s.size(); ++pos) {
    int d;
    char c = s[pos];
    if (std::isdigit(static_cast<unsigned char>(c)))
      d = c - '0';
    else if (base == 16 && std::isxdigit(static_cast<unsigned char>(c)))
      d = 10 + (std::tolower(c) - 'a');
    else
      return std::nullopt;
    v = v * base + d;
    if (v > 0xFFFFFFFFll) return std::nullopt;
  }
  return neg ? -v : v;
}

class Parser {
 public:
  explicit Parser(const std::string& source) : source_(source) {}

  ParseResult run() {
    std::istringstream in(source_);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      parse_line(line, lineno);
    }
    finish_function();
    if (prog_.entry.empty()) {
      if (prog_.find_function("main"))
        prog_.entry = "main";
      else
        error("no-entry", "no entry function (declare one with .entry or define main)", {lineno, 1});
    }
    for (const auto& d : validate_structure()) diags_.push_back(d);
    ParseResult res;
    res.diagnostics = diags_;
    bool has_error = std::any_of(diags_.begin(), diags_.end(),
                                 [](const Diagnostic& d) { return d.severity == Severity::Error; });
    if (!has_error) res.program = prog_;
    return res;
  }

 private:
  void error(const std::string& code, const std::string& msg, SourceLoc loc) {
    diags_.push_back({Severity::Error, code, msg, loc});
  }

  Function* cur_func() { return prog_.functions.empty() ? nullptr : &prog_.functions.back(); }

  BasicBlock* cur_block() {
    Function* f = cur_func();
    return (f && !f->blocks.empty()) ? &f->blocks.back() : nullptr;
  }

  void finish_block(SourceLoc loc) {
    BasicBlock* b = cur_block();
    if (b && b->instrs.empty()) error("empty-block", "block '" + b->label + "' has no instructions", loc);
  }

  void finish_function() {
    if (!cur_func()) return;
    finish_block({0, 0});
  }

  void set_terminator(BasicBlock& b) {
    if (b.instrs.empty()) return;
    switch (b.instrs.back().kind()) {
      case isa::InstrKind::Branch: b.terminator = Terminator::Branch; break;
      case isa::InstrKind::Jump: b.terminator = Terminator::Jump; break;
      case isa::InstrKind::Call: b.terminator = Terminator::Call; break;
      case isa::InstrKind::Ret: b.terminator = Terminator::Ret; break;
      case isa::InstrKind::Halt: b.terminator = Terminator::Halt; break;
      default: b.terminator = Terminator::Fallthrough; break;
    }
  }

  bool block_closed() {
    BasicBlock* b = cur_block();
    if (!b || b->instrs.empty()) return false;
    isa::InstrKind k = b->instrs.back().kind();
    return k == isa::InstrKind::Branch || k == isa::InstrKind::Jump || k == isa::InstrKind::Ret ||
           k == isa::InstrKind::Halt;
  }

  void parse_line(const std::string& line, int lineno) {
    auto toks = tokenize_line(line);
    if (toks.empty()) return;
    SourceLoc loc{lineno, toks[0].col};

    if (toks[0].text == ".data") return parse_data(toks, loc);
    if (toks[0].text == ".func") return parse_func(toks, loc);
    if (toks[0].text == ".entry") return parse_entry(toks, loc);
    if (toks[0].text[0] == '.')
      return error("unknown-directive", "unknown directive '" + toks[0].text + "'", loc);

    // label?
    if (toks.size() >= 2 && toks[1].text == ":") {
      if (!is_ident(toks[0].text)) return error("bad-label", "malformed label", loc);
      if (!cur_func()) return error("label-outside-function", "label outside .func", loc);
      if (toks.size() > 2) return error("trailing-tokens", "tokens after label", loc);
      if (cur_block() && cur_block()->instrs.empty())
        return error("empty-block",
                     "block '" + cur_block()->label + "' has no instructions before new label", loc);
      set_terminator(*cur_block());
      if (!labels_.insert(toks[0].text).second)
        return error("duplicate-label", "duplicate label '" + toks[0].text + "'", loc);
      cur_func()->blocks.push_back(BasicBlock{toks[0].text, {}, Terminator::Fallthrough});
      return;
    }

    return parse_instruction(toks, loc);
  }

  void parse_data(const std::vector<Token>& toks, SourceLoc loc) {
    if (cur_func())
      return error("data-inside-function", ".data must precede or follow functions, not split them",
                   loc);
    if (toks.size() < 3 || !is_ident(toks[1].text))
      return error("malformed-directive", ".data needs a name and a byte size", loc);
    DataObject obj;
    obj.name = toks[1].text;
    obj.loc = loc;
    auto size = parse_int(toks[2].text);
    if (!size || *size <= 0 || *size % isa::kWordSize != 0)
      return error("bad-data-size", "data size must be a positive multiple of 4", loc);
    obj.size = std::uint32_t(*size);
    for (std::size_t i = 3; i < toks.size(); ++i) {
      auto v = parse_int(toks[i].text);
      if (!v) return error("bad-init-word", "malformed init word", {loc.line, toks[i].col});
      obj.init.push_back(std::uint32_t(*v & 0xFFFFFFFF));
    }
    if (obj.init.size() * isa::kWordSize > obj.size)
      return error("init-overflow", "more init words than the object holds", loc);
    for (const auto& d : prog_.data_objects)
      if (d.name == obj.name)
        return error("duplicate-object", "duplicate data object '" + obj.name + "'", loc);
    prog_.data_objects.push_back(std::move(obj));
  }

  void parse_func(const std::vector<Token>& toks, SourceLoc loc) {
    if (toks.size() != 2 || !is_ident(toks[1].text))
      return error("malformed-directive", ".func needs a name", loc);
    finish_function();
    if (prog_.find_function(toks[1].text))
      return error("duplicate-function", "duplicate function '" + toks[1].text + "'", loc);
    if (!labels_.insert(toks[1].text).second)
      return error("duplicate-label", "function name clashes with label '" + toks[1].text + "'",
                   loc);
    Function f;
    f.name = toks[1].text;
    f.blocks.push_back(BasicBlock{f.name, {}, Terminator::Fallthrough});
    prog_.functions.push_back(std::move(f));
  }

  void parse_entry(const std::vector<Token>& toks, SourceLoc loc) {
    if (toks.size() != 2 || !is_ident(toks[1].text))
      return error("malformed-directive", ".entry needs a function name", loc);
    if (!prog_.entry.empty()) return error("duplicate-entry", "entry already declared", loc);
    prog_.entry = toks[1].text;
  }

  void parse_instruction(const std::vector<Token>& toks, SourceLoc loc) {
    if (!cur_func()) return error("instr-outside-function", "instruction outside .func", loc);
    const isa::OpcodeInfo* info = isa::opcode_info(std::string_view(toks[0].text));
    if (!info) return error("unknown-mnemonic", "unknown mnemonic '" + toks[0].text + "'", loc);
    if (block_closed())
      return error("unlabeled-block",
                   "instruction after a terminator must start a labeled block", loc);

    ProgInstr pi;
    pi.opcode = info->op;
    pi.loc = loc;
    std::vector<Token> ops(toks.begin() + 1, toks.end());

    auto want_reg = [&](std::size_t i, std::optional<unsigned>& out) {
      if (i >= ops.size()) return false;
      auto r = parse_reg(ops[i].text);
      if (!r) return false;
      out = r;
      return true;
    };

    bool ok = true;
    switch (info->kind) {
      case isa::InstrKind::Nop:
      case isa::InstrKind::Halt:
      case isa::InstrKind::Ret:
        ok = ops.empty();
        break;
      case isa::InstrKind::Alu:
        if (pi.opcode == isa::Opcode::CMP) {
          ok = ops.size() == 2 && want_reg(0, pi.src1) && want_reg(1, pi.src2);
        } else if (pi.opcode == isa::Opcode::LDI) {
          if (ops.size() == 3 && ops[1].text == "&" && is_ident(ops[2].text)) {
            ok = want_reg(0, pi.dst);
            pi.addr_object = ops[2].text;
          } else if (ops.size() == 2) {
            ok = want_reg(0, pi.dst);
            auto v = parse_int(ops[1].text);
            if (!v || *v < isa::kImmMin || *v > isa::kImmMax)
              return error("bad-immediate", "immediate out of signed 20-bit range", loc);
            pi.immediate = std::int32_t(*v);
          } else {
            ok = false;
          }
        } else {
          ok = ops.size() == 3 && want_reg(0, pi.dst) && want_reg(1, pi.src1) &&
               want_reg(2, pi.src2);
        }
        break;
      case isa::InstrKind::Load:
        // load rD, [rS]
        ok = ops.size() == 4 && want_reg(0, pi.dst) && ops[1].text == "[" &&
             want_reg(2, pi.src1) && ops[3].text == "]";
        break;
      case isa::InstrKind::Store:
        // store [rA], rV
        ok = ops.size() == 4 && ops[0].text == "[" && want_reg(1, pi.src1) &&
             ops[2].text == "]" && want_reg(3, pi.src2);
        break;
      case isa::InstrKind::Branch:
      case isa::InstrKind::Jump:
      case isa::InstrKind::Call:
        ok = ops.size() == 1 && is_ident(ops[0].text);
        if (ok) pi.target = ops[0].text;
        break;
    }
    if (!ok) return error("malformed-operand", "malformed operands for '" + toks[0].text + "'", loc);
    cur_block()->instrs.push_back(std::move(pi));
    set_terminator(*cur_block());
  }

  // Structural checks that do not need a fully-formed program object.
  std::vector<Diagnostic> validate_structure() {
    std::vector<Diagnostic> out;
    if (!prog_.entry.empty() && !prog_.find_function(prog_.entry))
      out.push_back({Severity::Error, "undefined-entry",
                     "entry function '" + prog_.entry + "' is not defined", {}});
    return out;
  }

  const std::string& source_;
  LogicalProgram prog_;
  std::vector<Diagnostic> diags_;
  std::set<std::string> labels_;
};

}  // namespace

ParseResult parse(const std::string& source) { return Parser(source).run(); }

std::vector<Diagnostic> validate(const LogicalProgram& p) {
  std::vector<Diagnostic> out;
  auto err = [&](const std::string& code, const std::string& msg, SourceLoc loc) {
    out.push_back({Severity::Error, code, msg, loc});
  };

  for (const auto& f : p.functions) {
    std::set<std::string> local_labels;
    for (const auto& b : f.blocks) local_labels.insert(b.label);
    for (std::size_t bi = 0; bi < f.blocks.size(); ++bi) {
      const BasicBlock& b = f.blocks[bi];
      if (b.instrs.empty()) {
        err("empty-block", "block '" + b.label + "' is empty", {});
        continue;
      }
      // Terminators only at block end.
      for (std::size_t i = 0; i + 1 < b.instrs.size(); ++i) {
        auto k = b.instrs[i].kind();
        if (k == isa::InstrKind::Branch || k == isa::InstrKind::Jump ||
            k == isa::InstrKind::Ret || k == isa::InstrKind::Halt)
          err("mid-block-terminator", "control transfer before block end in '" + b.label + "'",
              b.instrs[i].loc);
      }
      for (const auto& ins : b.instrs) {
        if (ins.target) {
          if (ins.kind() == isa::InstrKind::Call) {
            if (!p.find_function(*ins.target))
              err("undefined-function", "call to undefined function '" + *ins.target + "'",
                  ins.loc);
          } else if (!local_labels.count(*ins.target)) {
            err("undefined-target", "undefined target '" + *ins.target + "' in '" + f.name + "'",
                ins.loc);
          }
        }
        if (ins.addr_object && !p.object_ordinal(*ins.addr_object))
          err("undefined-object", "undefined data object '" + *ins.addr_object + "'", ins.loc);
      }
      bool falls = b.terminator == Terminator::Fallthrough || b.terminator == Terminator::Branch ||
                   b.terminator == Terminator::Call;
      if (falls && bi + 1 == f.blocks.size())
        err("fallthrough-off-end", "block '" + b.label + "' falls off the end of '" + f.name + "'",
            b.instrs.back().loc);
    }
  }

  if (p.entry.empty() || !p.find_function(p.entry))
    err("undefined-entry", "entry function missing", {});

  // Reachability from the entry: unreached blocks are only a warning.
  if (const Function* ef = p.find_function(p.entry)) {
    std::set<std::pair<std::uint32_t, std::uint32_t>> reached;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> work;
    auto fidx = [&](const std::string& name) -> std::optional<std::uint32_t> {
      for (std::uint32_t i = 0; i < p.functions.size(); ++i)
        if (p.functions[i].name == name) return i;
      return std::nullopt;
    };
    work.push_back({*fidx(ef->name), 0});
    while (!work.empty()) {
      auto [fi, bi] = work.back();
      work.pop_back();
      if (!reached.insert({fi, bi}).second) continue;
      const BasicBlock& b = p.functions[fi].blocks[bi];
      auto push_label = [&](const std::string& label) {
        for (std::uint32_t j = 0; j < p.functions[fi].blocks.size(); ++j)
          if (p.functions[fi].blocks[j].label == label) work.push_back({fi, j});
      };
      for (const auto& ins : b.instrs)
        if (ins.kind() == isa::InstrKind::Call && ins.target)
          if (auto cf = fidx(*ins.target)) work.push_back({*cf, 0});
      switch (b.terminator) {
        case Terminator::Jump:
          if (b.instrs.back().target) push_label(*b.instrs.back().target);
          break;
        case Terminator::Branch:
          if (b.instrs.back().target) push_label(*b.instrs.back().target);
          [[fallthrough]];
        case Terminator::Fallthrough:
        case Terminator::Call:
          if (bi + 1 < p.functions[fi].blocks.size()) work.push_back({fi, bi + 1});
          break;
        case Terminator::Ret:
        case Terminator::Halt:
          break;
      }
    }
    for (std::uint32_t fi = 0; fi < p.functions.size(); ++fi)
      for (std::uint32_t bi = 0; bi < p.functions[fi].blocks.size(); ++bi)
        if (!reached.count({fi, bi}))
          out.push_back({Severity::Warning, "unreachable-block",
                         "block '" + p.functions[fi].blocks[bi].label + "' is unreachable", {}});
  }
  return out;
}

namespace {

std::string reg_name(unsigned r) { return r == isa::kSpReg ? "sp" : "r" + std::to_string(r); }

std::string render_instr(const ProgInstr& i) {
  const isa::OpcodeInfo* info = isa::opcode_info(i.opcode);
  std::string m = info->mnemonic;
  switch (info->kind) {
    case isa::InstrKind::Nop:
    case isa::InstrKind::Halt:
    case isa::InstrKind::Ret:
      return m;
    case isa::InstrKind::Alu:
      if (i.opcode == isa::Opcode::CMP)
        return m + " " + reg_name(*i.src1) + ", " + reg_name(*i.src2);
      if (i.opcode == isa::Opcode::LDI) {
        if (i.addr_object) return m + " " + reg_name(*i.dst) + ", &" + *i.addr_object;
        return m + " " + reg_name(*i.dst) + ", " + std::to_string(*i.immediate);
      }
      return m + " " + reg_name(*i.dst) + ", " + reg_name(*i.src1) + ", " + reg_name(*i.src2);
    case isa::InstrKind::Load:
      return m + " " + reg_name(*i.dst) + ", [" + reg_name(*i.src1) + "]";
    case isa::InstrKind::Store:
      return m + " [" + reg_name(*i.src1) + "], " + reg_name(*i.src2);
    case isa::InstrKind::Branch:
    case isa::InstrKind::Jump:
    case isa::InstrKind::Call:
      return m + " " + *i.target;
  }
  return m;
}

}  // namespace

std::string pretty_print(const LogicalProgram& p) {
  std::ostringstream os;
  os << ".entry " << p.entry << "\n";
  if (!p.data_objects.empty()) os << "\n";
  for (const auto& d : p.data_objects) {
    os << ".data " << d.name << " " << d.size;
    for (auto w : d.init) os << " " << w;
    os << "\n";
  }
  for (const auto& f : p.functions) {
    os << "\n.func " << f.name << "\n";
    for (std::size_t bi = 0; bi < f.blocks.size(); ++bi) {
      const auto& b = f.blocks[bi];
      if (bi != 0) os << b.label << ":\n";
      for (const auto& i : b.instrs) os << "    " << render_instr(i) << "\n";
    }
  }
  return os.str();
}

}  // namespace divex::prog
