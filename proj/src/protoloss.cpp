#include "proton/protoloss.hpp"

#include <set>
#include <stdexcept>

namespace proton {

namespace {

Tensor as_row(const Tensor& t) { return t.rank() == 2 ? t : t.reshape(Shape{1, t.size()}); }

Tensor nll(const Tensor& candidates, const EpisodeOutputs& out) {
    if (static_cast<Index>(out.query_labels.size()) != out.query_protos.rows()) {
        throw std::invalid_argument("one label per query graph required");
    }
    const Tensor logp = log_softmax_rows(neg(dist_rows(out.query_protos, candidates)));
    return neg(mean(pick_cols(logp, out.query_labels)));
}

}  // namespace

Tensor class_prototype(std::span<const Tensor> graph_protos) {
    if (graph_protos.empty()) throw std::invalid_argument("class_prototype: no graph prototypes");
    std::vector<Tensor> rows;
    for (const auto& p : graph_protos) rows.push_back(as_row(p));
    return mean_rows(concat_rows(rows));
}

Tensor classify(const Tensor& query_proto, std::span<const Tensor> class_protos) {
    if (class_protos.size() < 2) throw std::invalid_argument("classify: need at least two classes");
    std::vector<Tensor> rows;
    for (const auto& p : class_protos) rows.push_back(as_row(p));
    return exp(log_softmax_rows(neg(dist_rows(as_row(query_proto), concat_rows(rows)))));
}

Tensor episodic_loss(const EpisodeOutputs& out) {
    for (Index label : out.query_labels) {
        if (label < 0 || label >= out.class_protos.rows()) {
            throw std::invalid_argument("query label " + std::to_string(label) + " is not an episode class");
        }
    }
    return nll(out.class_protos, out);
}

double episode_accuracy(const EpisodeOutputs& out) {
    const auto q = out.query_protos.mat();
    const auto c = out.class_protos.mat();
    Index correct = 0;
    for (Index i = 0; i < q.rows(); ++i) {
        Index best = 0;
        double best_d = (q.row(i) - c.row(0)).squaredNorm();
        for (Index j = 1; j < c.rows(); ++j) {
            const double d = (q.row(i) - c.row(j)).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        correct += best == out.query_labels[static_cast<std::size_t>(i)];
    }
    return static_cast<double>(correct) / static_cast<double>(q.rows());
}

PrototypeRegistry::PrototypeRegistry(double momentum) : momentum_(momentum) {
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("registry momentum must lie in [0, 1)");
}

void PrototypeRegistry::update(std::span<const std::string> class_ids, const Eigen::Ref<const RowMatrix>& protos) {
    if (static_cast<Index>(class_ids.size()) != protos.rows()) {
        throw std::invalid_argument("registry update: one prototype row per class id required");
    }
    if (!entries_.empty() && protos.cols() != width_) {
        throw DimensionError("registry width " + std::to_string(width_) + " does not match prototype width " +
                             std::to_string(protos.cols()));
    }
    width_ = protos.cols();
    for (std::size_t i = 0; i < class_ids.size(); ++i) {
        Vector v = protos.row(static_cast<Index>(i)).transpose();
        auto it = entries_.find(class_ids[i]);
        if (it == entries_.end()) {
            entries_.emplace(class_ids[i], Entry{std::move(v), 1});
        } else {
            it->second.vector = momentum_ * it->second.vector + (1.0 - momentum_) * v;
            ++it->second.update_count;
        }
    }
}

std::vector<TensorBlock> PrototypeRegistry::to_blocks() const {
    std::vector<TensorBlock> out;
    for (const auto& [id, e] : entries_) {
        out.push_back({"registry/" + id, Shape{e.vector.size()}, e.vector});
        out.push_back({"registry_count/" + id, Shape{1}, Vector::Constant(1, static_cast<double>(e.update_count))});
    }
    return out;
}

PrototypeRegistry PrototypeRegistry::from_checkpoint(const Checkpoint& ckpt, double momentum) {
    PrototypeRegistry reg(momentum);
    const std::string prefix = "registry/";
    for (const auto& b : ckpt.blocks) {
        if (b.name.rfind(prefix, 0) != 0) continue;
        const std::string id = b.name.substr(prefix.size());
        if (!reg.entries_.empty() && b.values.size() != reg.width_) {
            throw CheckpointError("registry entry " + id + " has inconsistent width");
        }
        reg.width_ = b.values.size();
        const TensorBlock* count = ckpt.find("registry_count/" + id);
        const auto n = count ? static_cast<std::uint64_t>(count->values[0]) : 1;
        reg.entries_.emplace(id, Entry{b.values, n});
    }
    return reg;
}

Tensor overall_loss(const EpisodeOutputs& out, const PrototypeRegistry& registry) {
    if (registry.size() && registry.width() != out.class_protos.cols()) {
        throw DimensionError("registry width " + std::to_string(registry.width()) + " does not match prototypes " +
                             std::to_string(out.class_protos.cols()));
    }
    const std::set<std::string> fresh(out.class_ids.begin(), out.class_ids.end());
    std::vector<const Vector*> stored;
    for (const auto& [id, e] : registry.entries()) {
        if (!fresh.count(id)) stored.push_back(&e.vector);
    }
    if (stored.empty()) return episodic_loss(out);
    RowMatrix extra(static_cast<Index>(stored.size()), out.class_protos.cols());
    for (std::size_t i = 0; i < stored.size(); ++i) extra.row(static_cast<Index>(i)) = stored[i]->transpose();
    const Tensor parts[] = {out.class_protos, Tensor::from_matrix(extra)};
    return nll(concat_rows(parts), out);
}

Tensor hybrid_loss(const Tensor& episodic, const Tensor& overall, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw std::invalid_argument("hybrid loss weight must lie in [0, 1], got " + std::to_string(lambda));
    }
    if (lambda == 0.0) return episodic;
    if (lambda == 1.0) return overall;
    return scale(episodic, 1.0 - lambda) + scale(overall, lambda);
}

}  // namespace proton
