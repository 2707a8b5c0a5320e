#pragma once

#include "proton/dataset.hpp"
#include "proton/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace proton {

enum class GraphRole { support, query };

/// Symmetric 0/1 adjacency over N real nodes plus the prototype (last index).
using Adjacency = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

/// Cycle edges i ~ (i±1) mod N without self loops, plus a star to the prototype.
Adjacency build_adjacency(Index n);
/// Real-node block of the adjacency as a dense attention mask [N×N].
RowMatrix cycle_mask(Index n);

struct ClassGraph {
    Tensor node_feats;   // [N×d]
    Tensor proto_feat;   // [1×d], mean of node_feats at construction
    Adjacency adjacency;
    std::string class_id;
    GraphRole role = GraphRole::support;

    Index size() const { return node_feats.rows(); }
};

ClassGraph build_graph(const Tensor& embeddings, std::string class_id, GraphRole role);

struct EpisodeSpec {
    Index ways = 5;
    Index graphs_per_class = 4;
    Index images_per_graph = 5;
    Index query_graphs_per_class = 1;
    bool sample_with_replacement = true;

    void validate() const;
};

/// One graph of an episode, by reference into the dataset.
struct GraphPlan {
    Index slot = 0;               // position of the class within the episode
    std::size_t class_index = 0;  // index into Dataset::classes
    std::vector<Index> impressions;
    GraphRole role = GraphRole::support;
};

struct Episode {
    std::vector<std::size_t> classes;  // C dataset class indices
    std::vector<GraphPlan> support;    // class-major, K per class
    std::vector<GraphPlan> query;      // class-major, Q per class
    /// True when some class had too few impressions for disjoint support/query pools.
    bool pools_overlap = false;
};

/// C distinct classes uniformly at random; impressions per graph distinct when
/// the pool allows, drawn with replacement across graphs.
Episode sample_episode(const Dataset& data, const EpisodeSpec& spec, std::uint64_t seed);

}  // namespace proton
