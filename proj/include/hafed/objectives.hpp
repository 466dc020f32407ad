#pragma once

#include <memory>
#include <vector>

#include "hafed/client.hpp"
#include "hafed/nn.hpp"
#include "hafed/sample.hpp"

namespace hafed {

// Unimodal client objective: mean loss/gradient of the client-mode forward
// over a dataset of single-modality sequences.
class UnimodalObjective final : public SgdObjective {
 public:
  UnimodalObjective(std::vector<SeqSample> samples, ArchSpec arch,
                    nn::LossKind loss);

  std::size_t size() const override { return samples_.size(); }
  double batch_loss(const ParamMap& params,
                    std::span<const std::size_t> batch) const override;
  double batch_loss_grad(const ParamMap& params,
                         std::span<const std::size_t> batch,
                         ParamMap& grad) const override;

  const std::vector<SeqSample>& samples() const { return samples_; }

 private:
  std::vector<SeqSample> samples_;
  ArchSpec arch_;
  nn::LossKind loss_;
};

// Aligned multimodal objective for the vanilla-multimodal reference
// setting: global-mode forward over aligned tuples.
class MultimodalObjective final : public SgdObjective {
 public:
  MultimodalObjective(std::vector<AlignedSample> samples, ArchSpec arch,
                      nn::LossKind loss);

  std::size_t size() const override { return samples_.size(); }
  double batch_loss(const ParamMap& params,
                    std::span<const std::size_t> batch) const override;
  double batch_loss_grad(const ParamMap& params,
                         std::span<const std::size_t> batch,
                         ParamMap& grad) const override;

 private:
  std::vector<AlignedSample> samples_;
  ArchSpec arch_;
  nn::LossKind loss_;
};

}  // namespace hafed
