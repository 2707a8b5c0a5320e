#pragma once

#include "proton/checkpoint.hpp"
#include "proton/tensor.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace proton {

/// Arithmetic mean of graph prototypes, as [1×d].
Tensor class_prototype(std::span<const Tensor> graph_protos);

/// P(c|q) = softmax_c(−‖q − p_c‖), as [1×C].
Tensor classify(const Tensor& query_proto, std::span<const Tensor> class_protos);

/// Refined prototypes of one episode. Labels index rows of class_protos.
struct EpisodeOutputs {
    Tensor query_protos;  // [Q×d]
    std::vector<Index> query_labels;
    Tensor class_protos;  // [C×d]
    std::vector<std::string> class_ids;
};

/// Mean negative log-likelihood of the true class over query graphs.
Tensor episodic_loss(const EpisodeOutputs& out);

/// Fraction of queries whose nearest class prototype is the true class.
double episode_accuracy(const EpisodeOutputs& out);

/// Running class-id → prototype map backing the all-class objective.
class PrototypeRegistry {
public:
    struct Entry {
        Vector vector;
        std::uint64_t update_count = 0;
    };

    explicit PrototypeRegistry(double momentum = 0.9);

    double momentum() const { return momentum_; }
    std::size_t size() const { return entries_.size(); }
    bool contains(const std::string& id) const { return entries_.count(id) > 0; }
    const Entry& at(const std::string& id) const { return entries_.at(id); }
    const std::map<std::string, Entry>& entries() const { return entries_; }
    Index width() const { return width_; }

    /// New classes are inserted; known ones move to μ·old + (1−μ)·new.
    void update(std::span<const std::string> class_ids, const Eigen::Ref<const RowMatrix>& protos);

    std::vector<TensorBlock> to_blocks() const;
    static PrototypeRegistry from_checkpoint(const Checkpoint& ckpt, double momentum);

private:
    double momentum_;
    Index width_ = 0;
    std::map<std::string, Entry> entries_;
};

/// NLL over every registry class plus the episode classes. Episode classes use
/// the fresh, differentiable prototypes; the rest use stored constants.
Tensor overall_loss(const EpisodeOutputs& out, const PrototypeRegistry& registry);

/// (1−λ)·episodic + λ·overall; λ ∈ {0, 1} returns the corresponding term itself.
Tensor hybrid_loss(const Tensor& episodic, const Tensor& overall, double lambda);

}  // namespace proton
