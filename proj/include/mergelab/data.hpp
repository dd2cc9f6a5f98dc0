#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mergelab/rng.hpp"
#include "mergelab/tensor.hpp"

namespace mergelab::data {

enum class TaskKind {
    PretrainMix,
    Math,
    Code,
    CrossDomain,
    InDomainA,
    InDomainB,
    InDomainAdapt1,
    InDomainAdapt2,
};

std::string task_kind_name(TaskKind kind);
TaskKind task_kind_from_name(const std::string& name);

struct SyntheticTaskSpec {
    TaskKind kind = TaskKind::PretrainMix;
    int size_chars = 20000;
    int operand_max = 20;   // math difficulty
    int program_len = 5;    // code difficulty (ops per program)
    uint64_t seed = 0;
    double datamix_ratio = 0.0;  // fraction of samples drawn from the pretrain mix

    uint64_t content_hash() const;
};

// Character-level tokenizer with reserved pad/unk ids.
class Tokenizer {
public:
    static constexpr int kPadId = 0;
    static constexpr int kUnkId = 1;

    // vocabulary = union of characters the given generators can emit, sorted
    static Tokenizer build(const std::vector<SyntheticTaskSpec>& specs);

    int vocab_size() const { return static_cast<int>(chars_.size()) + 2; }
    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& ids) const;
    const std::string& chars() const { return chars_; }

private:
    std::string chars_;           // id = index + 2
    std::map<char, int> to_id_;
};

struct Corpus {
    std::string name;
    std::string text;
    std::vector<int> tokens;
    int train_end = 0;  // tokens [0, train_end) train, [train_end, size) validation
    uint64_t seed = 0;
    uint64_t spec_hash = 0;

    int size() const { return static_cast<int>(tokens.size()); }
    int val_size() const { return size() - train_end; }
};

Corpus generate(const SyntheticTaskSpec& spec, const Tokenizer& tokenizer);

// the character set a generator of this kind may emit
std::string alphabet(TaskKind kind);

// ---------------------------------------------------------------------------
// exact evaluators backing the generators (also used for independent re-checks)
// ---------------------------------------------------------------------------

// left-assoc infix over +,-,* with standard precedence; integers only
std::optional<long long> eval_arithmetic(const std::string& expr);

// stack language: push N, add, sub, mul, dup, swap, print
// returns printed values, or nullopt on stack underflow / parse failure
std::optional<std::vector<long long>> run_stack_program(const std::string& program);

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

struct Batch {
    int batch_size = 0;
    int seq_len = 0;
    std::vector<int> tokens;    // B*T
    std::vector<int> targets;   // B*T, shifted by one
    std::vector<uint8_t> mask;  // B*T, 1 = position contributes

    std::span<const int> sequence(int b) const {
        return {tokens.data() + static_cast<size_t>(b) * seq_len, static_cast<size_t>(seq_len)};
    }
    std::span<const int> sequence_targets(int b) const {
        return {targets.data() + static_cast<size_t>(b) * seq_len, static_cast<size_t>(seq_len)};
    }
    std::span<const uint8_t> sequence_mask(int b) const {
        return {mask.data() + static_cast<size_t>(b) * seq_len, static_cast<size_t>(seq_len)};
    }
};

// Deterministic stream of training (or validation) batches drawn from the
// corpus split. A fixed seed reproduces the identical batch sequence.
class BatchStream {
public:
    BatchStream(const Corpus& corpus, int batch_size, int seq_len, uint64_t seed,
                bool validation = false);
    Batch next();

private:
    const Corpus& corpus_;
    int batch_size_;
    int seq_len_;
    bool validation_;
    Rng rng_;
};

}  // namespace mergelab::data
