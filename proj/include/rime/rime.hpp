#pragma once

#include "rime/config.hpp"
#include "rime/denoise.hpp"
#include "rime/env.hpp"
#include "rime/feedback_service.hpp"
#include "rime/log.hpp"
#include "rime/mdp.hpp"
#include "rime/metrics.hpp"
#include "rime/nn.hpp"
#include "rime/pretrain.hpp"
#include "rime/query.hpp"
#include "rime/replay_buffer.hpp"
#include "rime/reward_model.hpp"
#include "rime/sac.hpp"
#include "rime/stats.hpp"
#include "rime/teachers.hpp"
#include "rime/trainer.hpp"
#include "rime/verify.hpp"
