#pragma once

#include <memory>
#include <string>

#include "svp/config.hpp"
#include "svp/models_common.hpp"
#include "svp/worlds.hpp"

namespace svp {

// Exit codes shared by the CLI: 0 success, 1 usage/config error,
// 2 config/checkpoint mismatch, 3 numerical abort.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitMismatch = 2;
constexpr int kExitNumeric = 3;

// Uniform handle over the model family; everything speaks LabeledSequence.
class AnyModel {
public:
    static std::unique_ptr<AnyModel> create(const RunConfig& cfg, uint64_t seed);
    virtual ~AnyModel() = default;
    virtual ParamStore& params() = 0;
    virtual std::string kind() const = 0;
    virtual LossBreakdown train_loss(const LabeledSequence& seq, bool pretrain,
                                     RngStream& noise) = 0;
    virtual RolloutResult rollout(const LabeledSequence& seq, int64_t k,
                                  int64_t horizon, RngStream& noise,
                                  bool posterior_everywhere = false) const = 0;
};

// One synthetic sequence of the configured world; length covers conditioning
// plus the longer of the two horizons.
LabeledSequence generate_sequence(const RunConfig& cfg, uint64_t global_seed,
                                  int64_t index);

int cmd_gen_data(const RunConfig& cfg, const std::string& out_dir);
int cmd_train(const RunConfig& cfg, const std::string& data_dir,
              const std::string& out_dir);
int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
             const std::string& data_dir, const std::string& out_dir,
             int64_t horizon_override = -1);
int cmd_sample(const RunConfig& cfg, const std::string& checkpoint_path,
               const std::string& data_dir, const std::string& out_dir,
               int64_t horizon_override = -1);
int cmd_gradcheck();
int cmd_plot(const std::string& input_path, const std::string& out_dir);

}  // namespace svp
