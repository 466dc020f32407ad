#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hafed/arch.hpp"
#include "hafed/sample.hpp"

namespace hafed {

// Synthetic aligned multimodal regression data. Each sample carries a
// label-scaled sinusoid bundle projected into every modality with
// independent noise, so any one modality predicts the label and their
// fusion predicts it strictly better.
struct SynthSpec {
  std::size_t n_samples = 3000;
  std::vector<double> noise_sigma{0.6, 0.8, 1.0};    // per modality
  std::vector<double> label_weights =                // bins -3..+3
      {1, 1, 1, 1, 1, 1, 1};
  std::vector<std::size_t> pattern_freqs{1, 2, 3};   // integer cycles
  double train_frac = 0.70;
  double val_frac = 0.15;

  void validate(const ArchSpec& arch) const;
};

struct Dataset {
  std::vector<AlignedSample> train, val, test;
};

Dataset generate(const ArchSpec& arch, const SynthSpec& spec,
                 std::uint64_t seed);

// client -> (modality, train-sample indices); per modality the index lists
// are disjoint and exhaustive over the train split
struct PartitionPlan {
  struct Shard {
    int client = 0;
    int modality = 0;
    std::vector<std::size_t> indices;
  };
  std::vector<Shard> shards;  // one per client, ordered by client id
  double alpha = 1.0;
};

PartitionPlan partition(const std::vector<AlignedSample>& train,
                        std::size_t clients, std::size_t modalities,
                        double alpha, std::uint64_t seed);

// aligned shards for the vanilla-multimodal setting; same Dirichlet skew
PartitionPlan partition_aligned(const std::vector<AlignedSample>& train,
                                std::size_t clients, double alpha,
                                std::uint64_t seed);

// independently drop each view with probability xi; a draw that would
// empty a sample is redrawn
std::vector<AlignedSample> mask_modalities(std::vector<AlignedSample> samples,
                                           double xi, std::uint64_t seed);

int label_bin(double y);  // round(clamp(y, -3, 3)) in [-3, 3]

void export_csv(const std::filesystem::path& dir, const ArchSpec& arch,
                const Dataset& data, std::uint64_t seed);
Dataset ingest_csv(const std::filesystem::path& dir, const ArchSpec& arch);

// hash of the exported file contents, stable across runs
std::string dataset_content_hash(const std::filesystem::path& dir);

}  // namespace hafed
