#pragma once

// Checkpoints are a JSON document followed by a footer line
//   #fnv1a:<16 hex digits>
// hashing every byte before it. A file whose footer is missing or wrong is
// rejected, so a torn write never loads.

#include <cstdint>
#include <string>

#include "fragdiff/adaptor.hpp"
#include "fragdiff/denoiser.hpp"
#include "fragdiff/grammar.hpp"
#include "fragdiff/optim.hpp"

namespace fragdiff {

struct Checkpoint {
    std::string stage;
    std::uint64_t vocab_hash = 0;
    std::string schedule = "linear";
    DenoiserConfig model;
    AdaptorConfig adaptor_config;
    DenoiserParams params;
    AdaptorParams adaptor;
    AdamState model_opt;
    AdamState adaptor_opt;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
// Throws IoError on a damaged file and CheckpointMismatch when the stored
// vocabulary hash differs from `vocab`.
Checkpoint parse_checkpoint(const std::string& bytes, const Vocabulary& vocab = Vocabulary::standard());

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path, const Vocabulary& vocab = Vocabulary::standard());

}  // namespace fragdiff
