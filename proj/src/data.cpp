#include "mergelab/data.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mergelab::data {

using nn::ContractError;

namespace {

const char* const kNames[] = {"sam", "ana", "tom", "lee", "mia", "raj"};
const char* const kItems[] = {"apples", "coins", "books", "shells", "pens", "rocks"};

constexpr char kDigits[] = "0123456789";

uint64_t fnv_mix(uint64_t h, const void* p, size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string union_chars(const std::vector<std::string>& pieces) {
    std::set<char> chars;
    for (const auto& s : pieces) {
        chars.insert(s.begin(), s.end());
    }
    return std::string(chars.begin(), chars.end());
}

std::string math_words() {
    std::string all;
    for (const char* n : kNames) {
        all += n;
    }
    for (const char* it : kItems) {
        all += it;
    }
    return all + "hasandgetsmorelosesbagsofextraanswer";
}

std::string code_words() {
    return "runpushaddsubmuldupswapprint";
}

struct MathProblem {
    std::string story;       // word problem text, no equation
    std::string expr;        // e.g. "3+4" or "2*5+1"
    long long answer = 0;
    std::vector<long long> operands;
    int form = 0;  // 0 add, 1 sub, 2 mul-add
};

MathProblem make_math_problem(Rng& rng, int operand_max) {
    MathProblem p;
    const char* name = kNames[rng.next_below(std::size(kNames))];
    const char* item = kItems[rng.next_below(std::size(kItems))];
    p.form = static_cast<int>(rng.next_below(3));
    auto rint = [&](int lo, int hi) {
        return static_cast<long long>(lo + rng.next_below(static_cast<uint64_t>(hi - lo + 1)));
    };
    std::ostringstream story;
    std::ostringstream expr;
    if (p.form == 0) {
        const long long a = rint(1, operand_max);
        const long long b = rint(1, operand_max);
        story << name << " has " << a << " " << item << " and gets " << b << " more.";
        expr << a << "+" << b;
        p.answer = a + b;
        p.operands = {a, b};
    } else if (p.form == 1) {
        const long long a = rint(2, operand_max + 2);
        const long long b = rint(1, static_cast<int>(a) - 1);
        story << name << " has " << a << " " << item << " and loses " << b << ".";
        expr << a << "-" << b;
        p.answer = a - b;
        p.operands = {a, b};
    } else {
        const int half = std::max(2, operand_max / 2);
        const long long a = rint(2, half);
        const long long b = rint(2, half);
        const long long c = rint(1, operand_max);
        story << name << " has " << a << " bags of " << b << " " << item << " and " << c
              << " extra.";
        expr << a << "*" << b << "+" << c;
        p.answer = a * b + c;
        p.operands = {a, b, c};
    }
    p.story = story.str();
    p.expr = expr.str();
    return p;
}

std::string emit_math_sample(Rng& rng, int operand_max) {
    const MathProblem p = make_math_problem(rng, operand_max);
    std::ostringstream os;
    os << p.story << " " << p.expr << "=" << p.answer << ". answer " << p.answer << "\n";
    return os.str();
}

struct CodeOps {
    bool add = false, sub = false, mul = false, dup = false, swap = false;
};

CodeOps ops_for_kind(TaskKind kind) {
    CodeOps o;
    switch (kind) {
        case TaskKind::Code:
        case TaskKind::CrossDomain:
            o.add = o.sub = o.mul = o.dup = o.swap = true;
            break;
        case TaskKind::InDomainA:
            o.add = o.mul = o.dup = true;
            break;
        case TaskKind::InDomainB:
            o.add = o.sub = o.swap = true;
            break;
        case TaskKind::InDomainAdapt1:
            o.add = o.sub = o.dup = true;
            break;
        case TaskKind::InDomainAdapt2:
            o.add = o.mul = o.swap = true;
            break;
        default:
            o.add = true;
            break;
    }
    return o;
}

std::string emit_code_sample(Rng& rng, TaskKind kind, int operand_max, int program_len) {
    const CodeOps allowed = ops_for_kind(kind);
    std::vector<std::string> ops;
    std::vector<long long> stack;
    std::vector<long long> printed;
    auto push_random = [&] {
        const long long v = static_cast<long long>(1 + rng.next_below(operand_max));
        ops.push_back("push " + std::to_string(v));
        stack.push_back(v);
    };
    push_random();
    for (int i = 1; i < program_len; ++i) {
        std::vector<int> choices;  // 0 push 1 add 2 sub 3 mul 4 dup 5 swap 6 print
        choices.push_back(0);
        const size_t depth = stack.size();
        if (depth >= 2) {
            if (allowed.add) choices.push_back(1);
            if (allowed.sub) choices.push_back(2);
            if (allowed.mul) choices.push_back(3);
            if (allowed.swap) choices.push_back(5);
        }
        if (depth >= 1) {
            if (allowed.dup && depth < 6) choices.push_back(4);
            choices.push_back(6);
        }
        const int pick = choices[rng.next_below(choices.size())];
        switch (pick) {
            case 0:
                push_random();
                break;
            case 1: {
                const long long b = stack.back(); stack.pop_back();
                const long long a = stack.back(); stack.pop_back();
                stack.push_back(a + b);
                ops.push_back("add");
                break;
            }
            case 2: {
                const long long b = stack.back(); stack.pop_back();
                const long long a = stack.back(); stack.pop_back();
                stack.push_back(a - b);
                ops.push_back("sub");
                break;
            }
            case 3: {
                const long long b = stack.back(); stack.pop_back();
                const long long a = stack.back(); stack.pop_back();
                stack.push_back(a * b);
                ops.push_back("mul");
                break;
            }
            case 4:
                stack.push_back(stack.back());
                ops.push_back("dup");
                break;
            case 5:
                std::swap(stack[stack.size() - 1], stack[stack.size() - 2]);
                ops.push_back("swap");
                break;
            case 6:
                printed.push_back(stack.back());
                stack.pop_back();
                ops.push_back("print");
                break;
        }
        if (stack.empty()) {
            push_random();
        }
    }
    if (printed.empty()) {
        printed.push_back(stack.back());
        stack.pop_back();
        ops.push_back("print");
    }
    std::ostringstream os;
    os << "run:";
    for (size_t i = 0; i < ops.size(); ++i) {
        os << (i ? "; " : " ") << ops[i];
    }
    os << " ->";
    for (long long v : printed) {
        os << " " << v;
    }
    os << "\n";
    return os.str();
}

std::string emit_crossdomain_sample(Rng& rng, int operand_max) {
    const MathProblem p = make_math_problem(rng, operand_max);
    // Programs come in equivalent surface variants (operand order + swap, a
    // trailing dup) so the program half genuinely exercises the stack-language
    // op vocabulary rather than a single fixed template.
    const bool swapped = rng.next_below(2) == 1;
    const bool duped = rng.next_below(2) == 1;
    std::vector<std::string> ops;
    auto push = [&](long long v) { ops.push_back("push " + std::to_string(v)); };
    if (swapped) {
        push(p.operands[1]);
        push(p.operands[0]);
        ops.push_back("swap");
    } else {
        push(p.operands[0]);
        push(p.operands[1]);
    }
    ops.push_back(p.form == 0 ? "add" : p.form == 1 ? "sub" : "mul");
    if (p.form == 2) {
        push(p.operands[2]);
        ops.push_back("add");
    }
    if (duped) {
        ops.push_back("dup");
    }
    ops.push_back("print");
    std::ostringstream os;
    os << "q: " << p.story << " how many? s:";
    for (size_t i = 0; i < ops.size(); ++i) {
        os << (i ? "; " : " ") << ops[i];
    }
    os << " -> " << p.answer << "\n";
    return os.str();
}

std::string emit_pretrain_sample(Rng& rng, int operand_max) {
    const int pick = static_cast<int>(rng.next_below(3));
    auto rint = [&](int lo, int hi) {
        return static_cast<long long>(lo + rng.next_below(static_cast<uint64_t>(hi - lo + 1)));
    };
    std::ostringstream os;
    if (pick == 0) {
        const long long a = rint(1, operand_max);
        const long long b = rint(1, operand_max);
        os << "fact: " << a << "+" << b << "=" << (a + b) << ".\n";
    } else if (pick == 1) {
        const long long a = rint(1, operand_max);
        os << "run: push " << a << "; print -> " << a << "\n";
    } else {
        const char* name = kNames[rng.next_below(std::size(kNames))];
        const char* item = kItems[rng.next_below(std::size(kItems))];
        os << name << " counts " << rint(1, operand_max) << " " << item << ".\n";
    }
    return os.str();
}

std::string emit_sample(Rng& rng, const SyntheticTaskSpec& spec) {
    if (spec.datamix_ratio > 0.0 && rng.next_double() < spec.datamix_ratio) {
        return emit_pretrain_sample(rng, spec.operand_max);
    }
    switch (spec.kind) {
        case TaskKind::Math:
            return emit_math_sample(rng, spec.operand_max);
        case TaskKind::CrossDomain:
            return emit_crossdomain_sample(rng, spec.operand_max);
        case TaskKind::PretrainMix:
            return emit_pretrain_sample(rng, spec.operand_max);
        default:
            return emit_code_sample(rng, spec.kind, spec.operand_max, spec.program_len);
    }
}

}  // namespace

std::string task_kind_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::PretrainMix: return "pretrain_mix";
        case TaskKind::Math: return "math";
        case TaskKind::Code: return "code";
        case TaskKind::CrossDomain: return "crossdomain";
        case TaskKind::InDomainA: return "indomain_a";
        case TaskKind::InDomainB: return "indomain_b";
        case TaskKind::InDomainAdapt1: return "indomain_adapt_1";
        case TaskKind::InDomainAdapt2: return "indomain_adapt_2";
    }
    throw ContractError("unknown task kind");
}

TaskKind task_kind_from_name(const std::string& name) {
    for (TaskKind k : {TaskKind::PretrainMix, TaskKind::Math, TaskKind::Code,
                       TaskKind::CrossDomain, TaskKind::InDomainA, TaskKind::InDomainB,
                       TaskKind::InDomainAdapt1, TaskKind::InDomainAdapt2}) {
        if (task_kind_name(k) == name) {
            return k;
        }
    }
    throw ContractError("unknown task kind name: " + name);
}

uint64_t SyntheticTaskSpec::content_hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    const int k = static_cast<int>(kind);
    h = fnv_mix(h, &k, sizeof(k));
    h = fnv_mix(h, &size_chars, sizeof(size_chars));
    h = fnv_mix(h, &operand_max, sizeof(operand_max));
    h = fnv_mix(h, &program_len, sizeof(program_len));
    h = fnv_mix(h, &seed, sizeof(seed));
    h = fnv_mix(h, &datamix_ratio, sizeof(datamix_ratio));
    return h;
}

std::string alphabet(TaskKind kind) {
    const std::string digits = kDigits;
    const std::string mathy = math_words() + digits + " +-*=.\n";
    const std::string codey = code_words() + digits + " :;->\n";
    switch (kind) {
        case TaskKind::Math:
            return union_chars({mathy});
        case TaskKind::CrossDomain:
            return union_chars({mathy, codey, "howmany?qs:"});
        case TaskKind::PretrainMix:
            return union_chars({mathy, codey, "factcounts."});
        default:
            return union_chars({codey});
    }
}

Tokenizer Tokenizer::build(const std::vector<SyntheticTaskSpec>& specs) {
    std::set<char> chars;
    for (const auto& spec : specs) {
        const std::string a = alphabet(spec.kind);
        chars.insert(a.begin(), a.end());
        if (spec.datamix_ratio > 0.0) {
            const std::string p = alphabet(TaskKind::PretrainMix);
            chars.insert(p.begin(), p.end());
        }
    }
    Tokenizer t;
    t.chars_.assign(chars.begin(), chars.end());
    for (size_t i = 0; i < t.chars_.size(); ++i) {
        t.to_id_[t.chars_[i]] = static_cast<int>(i) + 2;
    }
    return t;
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (char c : text) {
        auto it = to_id_.find(c);
        ids.push_back(it == to_id_.end() ? kUnkId : it->second);
    }
    return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id == kPadId) {
            continue;
        }
        if (id == kUnkId || id < 0 || id - 2 >= static_cast<int>(chars_.size())) {
            out += '?';
        } else {
            out += chars_[id - 2];
        }
    }
    return out;
}

Corpus generate(const SyntheticTaskSpec& spec, const Tokenizer& tokenizer) {
    Rng rng(spec.seed ^ spec.content_hash());
    Corpus corpus;
    corpus.name = task_kind_name(spec.kind);
    corpus.seed = spec.seed;
    corpus.spec_hash = spec.content_hash();
    while (static_cast<int>(corpus.text.size()) < spec.size_chars) {
        corpus.text += emit_sample(rng, spec);
    }
    corpus.tokens = tokenizer.encode(corpus.text);
    corpus.train_end = static_cast<int>(corpus.tokens.size() * 9 / 10);
    return corpus;
}

// ---------------------------------------------------------------------------
// exact evaluators
// ---------------------------------------------------------------------------

std::optional<long long> eval_arithmetic(const std::string& expr) {
    std::vector<long long> terms;
    std::vector<char> ops;
    size_t i = 0;
    auto parse_int = [&]() -> std::optional<long long> {
        bool neg = false;
        if (i < expr.size() && expr[i] == '-') {
            neg = true;
            ++i;
        }
        if (i >= expr.size() || !std::isdigit(static_cast<unsigned char>(expr[i]))) {
            return std::nullopt;
        }
        long long v = 0;
        while (i < expr.size() && std::isdigit(static_cast<unsigned char>(expr[i]))) {
            v = v * 10 + (expr[i] - '0');
            ++i;
        }
        return neg ? -v : v;
    };
    auto first = parse_int();
    if (!first) {
        return std::nullopt;
    }
    terms.push_back(*first);
    while (i < expr.size()) {
        const char op = expr[i];
        if (op != '+' && op != '-' && op != '*') {
            return std::nullopt;
        }
        ++i;
        auto v = parse_int();
        if (!v) {
            return std::nullopt;
        }
        if (op == '*') {
            terms.back() *= *v;
        } else {
            ops.push_back(op);
            terms.push_back(*v);
        }
    }
    long long acc = terms[0];
    for (size_t t = 0; t < ops.size(); ++t) {
        acc = ops[t] == '+' ? acc + terms[t + 1] : acc - terms[t + 1];
    }
    return acc;
}

std::optional<std::vector<long long>> run_stack_program(const std::string& program) {
    std::vector<long long> stack;
    std::vector<long long> printed;
    std::istringstream in(program);
    std::string instr;
    while (std::getline(in, instr, ';')) {
        std::istringstream tok(instr);
        std::string op;
        tok >> op;
        if (op.empty()) {
            continue;
        }
        if (op == "push") {
            long long v = 0;
            if (!(tok >> v)) {
                return std::nullopt;
            }
            stack.push_back(v);
        } else if (op == "add" || op == "sub" || op == "mul") {
            if (stack.size() < 2) {
                return std::nullopt;
            }
            const long long b = stack.back(); stack.pop_back();
            const long long a = stack.back(); stack.pop_back();
            stack.push_back(op == "add" ? a + b : op == "sub" ? a - b : a * b);
        } else if (op == "dup") {
            if (stack.empty()) {
                return std::nullopt;
            }
            stack.push_back(stack.back());
        } else if (op == "swap") {
            if (stack.size() < 2) {
                return std::nullopt;
            }
            std::swap(stack[stack.size() - 1], stack[stack.size() - 2]);
        } else if (op == "print") {
            if (stack.empty()) {
                return std::nullopt;
            }
            printed.push_back(stack.back());
            stack.pop_back();
        } else {
            return std::nullopt;
        }
    }
    return printed;
}

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

BatchStream::BatchStream(const Corpus& corpus, int batch_size, int seq_len, uint64_t seed,
                         bool validation)
    : corpus_(corpus), batch_size_(batch_size), seq_len_(seq_len), validation_(validation),
      rng_(seed ^ (validation ? 0x76616cULL : 0x747261696eULL)) {
    const int region = validation ? corpus.val_size() : corpus.train_end;
    if (region < seq_len + 2) {
        throw ContractError("batch stream: corpus split too small for one batch (" +
                            std::to_string(region) + " tokens, need " +
                            std::to_string(seq_len + 2) + ")");
    }
}

Batch BatchStream::next() {
    Batch b;
    b.batch_size = batch_size_;
    b.seq_len = seq_len_;
    b.tokens.resize(static_cast<size_t>(batch_size_) * seq_len_);
    b.targets.resize(b.tokens.size());
    b.mask.assign(b.tokens.size(), 1);
    const int lo = validation_ ? corpus_.train_end : 0;
    const int hi = (validation_ ? corpus_.size() : corpus_.train_end) - seq_len_ - 1;
    for (int s = 0; s < batch_size_; ++s) {
        const int start = lo + static_cast<int>(rng_.next_below(static_cast<uint64_t>(hi - lo + 1)));
        for (int t = 0; t < seq_len_; ++t) {
            b.tokens[static_cast<size_t>(s) * seq_len_ + t] = corpus_.tokens[start + t];
            b.targets[static_cast<size_t>(s) * seq_len_ + t] = corpus_.tokens[start + t + 1];
        }
    }
    return b;
}

}  // namespace mergelab::data
