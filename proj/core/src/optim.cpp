#include "tfpose/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace tfpose {

void OptimConfig::validate() const {
  if (base_lr <= 0) throw std::invalid_argument("OptimConfig: base_lr must be positive");
  if (!(0 < beta1 && beta1 < beta2 && beta2 < 1)) {
    throw std::invalid_argument("OptimConfig: requires 0 < beta1 < beta2 < 1");
  }
  if (weight_decay < 0) throw std::invalid_argument("OptimConfig: weight_decay must be >= 0");
  if (transformer_lr_factor <= 0) throw std::invalid_argument("OptimConfig: transformer_lr_factor must be positive");
  if (total_steps < 1) throw std::invalid_argument("OptimConfig: total_steps must be >= 1");
  if (warmup_steps < 0 || warmup_steps >= total_steps) {
    throw std::invalid_argument("OptimConfig: warmup_steps must be in [0, total_steps)");
  }
}

double cosine_lr_factor(std::int64_t step, const OptimConfig& cfg) {
  if (step < 0 || step > cfg.total_steps) {
    throw std::invalid_argument("cosine_lr_factor: step outside [0, total_steps]");
  }
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
    return static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  }
  const double progress = static_cast<double>(step - cfg.warmup_steps) /
                          static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  return 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
ParamGroups param_groups(const ParamRegistry<T>& reg) {
  auto has_prefix = [](const std::string& name, const char* prefix) {
    return name.rfind(prefix, 0) == 0;
  };
  ParamGroups groups;
  for (std::size_t i = 0; i < reg.items().size(); ++i) {
    const std::string& name = reg.items()[i].first;
    if (has_prefix(name, "backbone.") || has_prefix(name, "input_proj.") || has_prefix(name, "aux.")) {
      groups.main.push_back(i);
    } else if (has_prefix(name, "encoder.") || has_prefix(name, "decoder.") ||
               has_prefix(name, "level_embed") || has_prefix(name, "query_content") ||
               has_prefix(name, "query_pos") || has_prefix(name, "y0_logits")) {
      groups.transformer.push_back(i);
    } else {
      throw std::runtime_error("param_groups: no learning-rate group for parameter '" + name + "'");
    }
  }
  return groups;
}

template <typename T>
AdamW<T>::AdamW(const ParamRegistry<T>& params, const OptimConfig& cfg)
    : params_(&params), cfg_(cfg) {
  cfg_.validate();
  groups_ = param_groups(params);
  factor_.assign(params.items().size(), 0.0);
  for (std::size_t i : groups_.main) factor_[i] = 1.0;
  for (std::size_t i : groups_.transformer) factor_[i] = cfg_.transformer_lr_factor;
  for (const auto& [name, t] : params.items()) {
    m_.emplace_back(t->value.size(), T(0));
    v_.emplace_back(t->value.size(), T(0));
  }
}

template <typename T>
void AdamW<T>::step(const Gradients<T>& grads, std::int64_t step_index) {
  const auto& items = params_->items();
  // validate first so a rejected step leaves parameters untouched
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto* gbuf = grads.find(items[i].second.get());
    if (gbuf && !all_finite(*gbuf)) {
      throw std::runtime_error("adamw_step: non-finite gradient for parameter '" + items[i].first + "'");
    }
  }

  const double t = static_cast<double>(step_index + 1);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  const double sched = cosine_lr_factor(std::min(step_index, cfg_.total_steps), cfg_);
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& p = items[i].second->value;
    const auto* gbuf = grads.find(items[i].second.get());
    const double lr = cfg_.base_lr * sched * factor_[i];
    auto& m = m_[i];
    auto& v = v_[i];
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    for (std::size_t j = 0; j < p.size(); ++j) {
      const T g = gbuf ? (*gbuf)[j] : T(0);
      m[j] = b1 * m[j] + (T(1) - b1) * g;
      v[j] = b2 * v[j] + (T(1) - b2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      double upd = lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      upd += lr * cfg_.weight_decay * p[j];
      p[j] = static_cast<T>(p[j] - upd);
    }
  }
}

template <typename T>
void AdamW<T>::set_state(std::vector<std::vector<T>> m, std::vector<std::vector<T>> v) {
  if (m.size() != m_.size() || v.size() != v_.size()) {
    throw std::invalid_argument("AdamW::set_state: state count mismatch");
  }
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i].size() != m_[i].size() || v[i].size() != v_[i].size()) {
      throw std::invalid_argument("AdamW::set_state: state size mismatch at parameter " +
                                  params_->items()[i].first);
    }
  }
  m_ = std::move(m);
  v_ = std::move(v);
}

template ParamGroups param_groups<float>(const ParamRegistry<float>&);
template ParamGroups param_groups<double>(const ParamRegistry<double>&);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace tfpose
