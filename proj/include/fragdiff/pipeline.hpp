#pragma once

// Stage runner behind the command-line tool. Every stage reads and writes
// inside the run's output directory:
//
//   checkpoint.ckpt          model, adaptor and optimizer state
//   supervised_metrics.csv   iter,loss
//   rl_metrics.csv           iter,mean_reward,validity_rate,success_rate,entropy,clip_fraction
//   efo_stats.csv            per-generation statistics
//   vocab.tsv                final fragment vocabulary
//   efo_molecules.txt        generated molecules with scores
//   samples.txt              one molecule per line
//   report.json              evaluation report
//   eval_metrics.csv         the report as one CSV row

#include <ostream>
#include <string>

#include "fragdiff/config.hpp"
#include "fragdiff/rewards.hpp"
#include "fragdiff/steppo.hpp"
#include "fragdiff/supervised.hpp"

namespace fragdiff {

void run_stage(const RunConfig& config, const std::string& stage, std::ostream& log);
// Runs config.run.stage ("all" expands to supervised, rl, efo, eval).
void run_pipeline(const RunConfig& config, std::ostream& log);

OracleSuite make_oracles(const RunConfig& config);

}  // namespace fragdiff
