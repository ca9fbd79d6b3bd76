#pragma once

#include "cloudmask/resnet.hpp"
#include "cloudmask/trainer.hpp"
#include "json.hpp"

namespace cloudmask::detail {

inline nlohmann::json to_json(const NetworkConfig& c) {
  return {{"depth_param", c.depth_param},
          {"stage_widths", c.stage_widths},
          {"input_channels", c.input_channels},
          {"input_extent", c.input_extent},
          {"num_classes", c.num_classes},
          {"dropout_keep", c.dropout_keep},
          {"input_bands", c.input_bands},
          {"weighted_layers", c.weighted_layers()}};
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"lr_initial", c.lr_initial},
          {"lr_decay_factor", c.lr_decay_factor},
          {"plateau_patience", c.plateau_patience},
          {"plateau_min_delta", c.plateau_min_delta},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"dropout_keep", c.dropout_keep},
          {"max_epochs", c.max_epochs},
          {"min_epochs", c.min_epochs},
          {"lr_floor", c.lr_floor},
          {"seed", c.seed}};
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace cloudmask::detail
