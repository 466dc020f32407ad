#include "hafed/objectives.hpp"

#include <stdexcept>

namespace hafed {

UnimodalObjective::UnimodalObjective(std::vector<SeqSample> samples,
                                     ArchSpec arch, nn::LossKind loss)
    : samples_(std::move(samples)), arch_(std::move(arch)), loss_(loss) {
  if (samples_.empty())
    throw std::invalid_argument("unimodal objective: empty dataset");
  const int m = samples_.front().modality;
  for (const auto& s : samples_) {
    if (s.modality != m)
      throw std::invalid_argument("unimodal objective: mixed modalities");
  }
}

double UnimodalObjective::batch_loss(const ParamMap& params,
                                     std::span<const std::size_t> batch) const {
  double total = 0.0;
  for (const std::size_t i : batch) {
    const double pred = nn::forward_client(samples_[i], params, arch_);
    total += nn::loss_value(pred, samples_[i].label, loss_);
  }
  return total / static_cast<double>(batch.size());
}

double UnimodalObjective::batch_loss_grad(const ParamMap& params,
                                          std::span<const std::size_t> batch,
                                          ParamMap& grad) const {
  grad.fill(0.0);
  double total = 0.0;
  for (const std::size_t i : batch) {
    total += nn::loss_grad_client(samples_[i], params, arch_, loss_, grad);
  }
  grad.scale(1.0 / static_cast<double>(batch.size()));
  return total / static_cast<double>(batch.size());
}

MultimodalObjective::MultimodalObjective(std::vector<AlignedSample> samples,
                                         ArchSpec arch, nn::LossKind loss)
    : samples_(std::move(samples)), arch_(std::move(arch)), loss_(loss) {
  if (samples_.empty())
    throw std::invalid_argument("multimodal objective: empty dataset");
}

double MultimodalObjective::batch_loss(
    const ParamMap& params, std::span<const std::size_t> batch) const {
  double total = 0.0;
  for (const std::size_t i : batch) {
    const double pred = nn::forward_global(samples_[i], params, arch_);
    total += nn::loss_value(pred, samples_[i].label, loss_);
  }
  return total / static_cast<double>(batch.size());
}

double MultimodalObjective::batch_loss_grad(const ParamMap& params,
                                            std::span<const std::size_t> batch,
                                            ParamMap& grad) const {
  grad.fill(0.0);
  double total = 0.0;
  for (const std::size_t i : batch) {
    total += nn::loss_grad_global(samples_[i], params, arch_, loss_, grad);
  }
  grad.scale(1.0 / static_cast<double>(batch.size()));
  return total / static_cast<double>(batch.size());
}

}  // namespace hafed
