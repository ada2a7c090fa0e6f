#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "camogen/core/graph.hpp"
#include "camogen/core/rng.hpp"
#include "camogen/core/tensor.hpp"

namespace camogen::sg {

struct GraphError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Parse/validation failure with the JSON path of the offending field.
struct SchemaError : std::runtime_error {
    std::string path;
    SchemaError(std::string p, const std::string& what)
        : std::runtime_error("schema error at \"" + p + "\": " + what), path(std::move(p)) {}
};

struct ObjectNode {
    int id = 0;
    std::string category;
    std::string attribute;
    bool operator==(const ObjectNode&) const = default;
};

struct RelationEdge {
    int subject_id = 0;
    int object_id = 0;
    std::string predicate;
    bool operator==(const RelationEdge&) const = default;
};

struct SceneGraph {
    std::vector<ObjectNode> nodes;   // ids always 0..N_o-1 after build
    std::vector<RelationEdge> edges;
    std::string caption;
    int node_count() const { return static_cast<int>(nodes.size()); }
    bool operator==(const SceneGraph&) const = default;
};

// (a_i, o_i, e_ij, o_j, a_j) as vocabulary indices
struct Quintuple {
    int attr_i = 0, obj_i = 0, rel = 0, obj_j = 0, attr_j = 0;
    bool operator==(const Quintuple&) const = default;
};

class Vocabulary {
public:
    enum class Kind { object, attribute, relation };

    Vocabulary();
    int register_token(Kind kind, const std::string& token);  // idempotent, never index 0
    int index_of(Kind kind, const std::string& token) const;  // throws GraphError if absent
    bool contains(Kind kind, const std::string& token) const;
    int size(Kind kind) const;  // includes the reserved pad slot 0
    const std::vector<std::string>& tokens(Kind kind) const;  // [0] is the pad marker

    void register_graph(const SceneGraph& g);

    std::string to_json() const;
    static Vocabulary from_json(const std::string& text);
    bool operator==(const Vocabulary&) const = default;

private:
    struct Table {
        std::vector<std::string> tokens;  // tokens[0] = "<pad>"
        bool operator==(const Table&) const = default;
    };
    Table& table(Kind k) { return tables_[static_cast<size_t>(k)]; }
    const Table& table(Kind k) const { return tables_[static_cast<size_t>(k)]; }
    Table tables_[3];
};

struct EmbeddingTables {
    ad::Param obj, attr, rel;  // rows = vocab size (incl. pad), cols = width
    static EmbeddingTables init(const Vocabulary& vocab, int width, Rng& rng);
};

// Validates and renumbers node ids to 0..N_o-1 in input order; edge endpoints
// are remapped accordingly.
SceneGraph build_graph(std::vector<ObjectNode> nodes, std::vector<RelationEdge> edges,
                       std::string caption);

std::vector<Quintuple> to_quintuples(const SceneGraph& g, const Vocabulary& vocab);

// edge k -> (subject index, object index)
std::vector<std::pair<int, int>> edge_incidence(const SceneGraph& g);

struct GraphVars {
    ad::Var nodes;  // [N_o, C]
    ad::Var attrs;  // [N_o, C]
    ad::Var edges;  // [|E|, C]
};

GraphVars embed_graph(ad::Tape& t, const SceneGraph& g, const Vocabulary& vocab,
                      EmbeddingTables& tables);

struct GcnParams {
    struct Round {
        ad::Param w_msg;  // [5C, C]
        ad::Param b_msg;  // [1, C]
        ad::Param w_upd;  // [2C, C]
        ad::Param b_upd;  // [1, C]
    };
    std::vector<Round> rounds;
    static GcnParams init(int rounds, int width, Rng& rng);
};

// rounds = 0 is the identity on node embeddings. Each round:
//   msg_k  = [a_i ; h_i ; e_k ; h_j ; a_j] * W_msg + b_msg       (per edge k)
//   agg_i  = mean of msg_k over edges incident to node i (zero if none)
//   h_i'   = silu([h_i ; agg_i] * W_upd + b_upd)
ad::Var relational_reasoning(ad::Tape& t, ad::Var node_emb, ad::Var attr_emb, ad::Var edge_emb,
                             const std::vector<std::pair<int, int>>& incidence, GcnParams& params,
                             int rounds);

SceneGraph parse_scene_graph(const std::string& text);
std::string serialize_scene_graph(const SceneGraph& g);

}  // namespace camogen::sg
