#include "camogen/scene_graph.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

namespace camogen::sg {

using nlohmann::json;

// ----------------------------------------------------------------- Vocabulary

Vocabulary::Vocabulary() {
    for (auto& t : tables_) t.tokens = {"<pad>"};
}

int Vocabulary::register_token(Kind kind, const std::string& token) {
    if (token.empty()) throw GraphError("empty token cannot be registered");
    auto& toks = table(kind).tokens;
    for (size_t i = 1; i < toks.size(); ++i)
        if (toks[i] == token) return static_cast<int>(i);
    toks.push_back(token);
    return static_cast<int>(toks.size()) - 1;
}

int Vocabulary::index_of(Kind kind, const std::string& token) const {
    const auto& toks = table(kind).tokens;
    for (size_t i = 1; i < toks.size(); ++i)
        if (toks[i] == token) return static_cast<int>(i);
    throw GraphError("token not in vocabulary: \"" + token + "\"");
}

bool Vocabulary::contains(Kind kind, const std::string& token) const {
    const auto& toks = table(kind).tokens;
    return std::find(toks.begin() + 1, toks.end(), token) != toks.end();
}

int Vocabulary::size(Kind kind) const { return static_cast<int>(table(kind).tokens.size()); }

const std::vector<std::string>& Vocabulary::tokens(Kind kind) const { return table(kind).tokens; }

void Vocabulary::register_graph(const SceneGraph& g) {
    for (const auto& n : g.nodes) {
        register_token(Kind::object, n.category);
        register_token(Kind::attribute, n.attribute);
    }
    for (const auto& e : g.edges) register_token(Kind::relation, e.predicate);
}

std::string Vocabulary::to_json() const {
    json j;
    const char* names[3] = {"objects", "attributes", "relations"};
    for (int k = 0; k < 3; ++k) {
        json arr = json::array();
        const auto& toks = tables_[static_cast<size_t>(k)].tokens;
        for (size_t i = 1; i < toks.size(); ++i) arr.push_back(toks[i]);
        j[names[k]] = arr;
    }
    return j.dump();
}

Vocabulary Vocabulary::from_json(const std::string& text) {
    Vocabulary v;
    const json j = json::parse(text);
    const char* names[3] = {"objects", "attributes", "relations"};
    const Kind kinds[3] = {Kind::object, Kind::attribute, Kind::relation};
    for (int k = 0; k < 3; ++k)
        for (const auto& tok : j.at(names[k])) v.register_token(kinds[k], tok.get<std::string>());
    return v;
}

EmbeddingTables EmbeddingTables::init(const Vocabulary& vocab, int width, Rng& rng) {
    auto make = [&](Vocabulary::Kind k, const char* name) {
        Tensor t({vocab.size(k), width});
        for (auto& v : t.data) v = 0.1 * rng.normal();
        for (int c = 0; c < width; ++c) t.at(0, c) = 0.0;  // pad row stays zero
        return ad::Param(name, std::move(t));
    };
    EmbeddingTables tabs;
    tabs.obj = make(Vocabulary::Kind::object, "scene_graph.emb.obj");
    tabs.attr = make(Vocabulary::Kind::attribute, "scene_graph.emb.attr");
    tabs.rel = make(Vocabulary::Kind::relation, "scene_graph.emb.rel");
    return tabs;
}

// ---------------------------------------------------------------- build_graph

SceneGraph build_graph(std::vector<ObjectNode> nodes, std::vector<RelationEdge> edges,
                       std::string caption) {
    if (nodes.empty()) throw GraphError("graph needs at least one node");

    std::unordered_map<int, int> renumber;  // original id -> 0..N-1
    for (size_t i = 0; i < nodes.size(); ++i) {
        if (renumber.count(nodes[i].id))
            throw GraphError("duplicate node id " + std::to_string(nodes[i].id));
        renumber[nodes[i].id] = static_cast<int>(i);
    }

    SceneGraph g;
    g.caption = std::move(caption);
    g.nodes = std::move(nodes);
    for (size_t i = 0; i < g.nodes.size(); ++i) g.nodes[i].id = static_cast<int>(i);

    std::set<std::pair<int, int>> seen;
    for (auto e : edges) {
        const auto s = renumber.find(e.subject_id);
        const auto o = renumber.find(e.object_id);
        if (s == renumber.end())
            throw GraphError("edge references missing node id " + std::to_string(e.subject_id));
        if (o == renumber.end())
            throw GraphError("edge references missing node id " + std::to_string(e.object_id));
        e.subject_id = s->second;
        e.object_id = o->second;
        if (e.subject_id == e.object_id)
            throw GraphError("self-loop edge at node " + std::to_string(e.subject_id));
        if (!seen.insert({e.subject_id, e.object_id}).second)
            throw GraphError("duplicate edge for ordered pair (" + std::to_string(e.subject_id) +
                             "," + std::to_string(e.object_id) + ")");
        g.edges.push_back(std::move(e));
    }
    return g;
}

std::vector<Quintuple> to_quintuples(const SceneGraph& g, const Vocabulary& vocab) {
    std::vector<Quintuple> out;
    out.reserve(g.edges.size());
    for (const auto& e : g.edges) {
        const auto& ni = g.nodes[static_cast<size_t>(e.subject_id)];
        const auto& nj = g.nodes[static_cast<size_t>(e.object_id)];
        Quintuple q;
        q.attr_i = vocab.index_of(Vocabulary::Kind::attribute, ni.attribute);
        q.obj_i = vocab.index_of(Vocabulary::Kind::object, ni.category);
        q.rel = vocab.index_of(Vocabulary::Kind::relation, e.predicate);
        q.obj_j = vocab.index_of(Vocabulary::Kind::object, nj.category);
        q.attr_j = vocab.index_of(Vocabulary::Kind::attribute, nj.attribute);
        out.push_back(q);
    }
    return out;
}

std::vector<std::pair<int, int>> edge_incidence(const SceneGraph& g) {
    std::vector<std::pair<int, int>> inc;
    inc.reserve(g.edges.size());
    for (const auto& e : g.edges) inc.emplace_back(e.subject_id, e.object_id);
    return inc;
}

// ---------------------------------------------------------------- embeddings

GraphVars embed_graph(ad::Tape& t, const SceneGraph& g, const Vocabulary& vocab,
                      EmbeddingTables& tables) {
    std::vector<int> obj_idx, attr_idx, rel_idx;
    for (const auto& n : g.nodes) {
        obj_idx.push_back(vocab.index_of(Vocabulary::Kind::object, n.category));
        attr_idx.push_back(vocab.index_of(Vocabulary::Kind::attribute, n.attribute));
    }
    for (const auto& e : g.edges)
        rel_idx.push_back(vocab.index_of(Vocabulary::Kind::relation, e.predicate));

    GraphVars v;
    v.nodes = t.rows_gather(t.param(tables.obj), obj_idx);
    v.attrs = t.rows_gather(t.param(tables.attr), attr_idx);
    v.edges = t.rows_gather(t.param(tables.rel), rel_idx);
    return v;
}

GcnParams GcnParams::init(int rounds, int width, Rng& rng) {
    GcnParams p;
    for (int r = 0; r < rounds; ++r) {
        auto mat = [&](int rows, int cols, const std::string& name) {
            Tensor t({rows, cols});
            const double s = 1.0 / std::sqrt(static_cast<double>(rows));
            for (auto& v : t.data) v = s * rng.normal();
            return ad::Param(name, std::move(t));
        };
        const std::string base = "scene_graph.gcn.round" + std::to_string(r);
        Round round;
        round.w_msg = mat(5 * width, width, base + ".w_msg");
        round.b_msg = ad::Param(base + ".b_msg", Tensor({1, width}));
        round.w_upd = mat(2 * width, width, base + ".w_upd");
        round.b_upd = ad::Param(base + ".b_upd", Tensor({1, width}));
        p.rounds.push_back(std::move(round));
    }
    return p;
}

ad::Var relational_reasoning(ad::Tape& t, ad::Var node_emb, ad::Var attr_emb, ad::Var edge_emb,
                             const std::vector<std::pair<int, int>>& incidence, GcnParams& params,
                             int rounds) {
    if (rounds < 0) throw GraphError("relational_reasoning: rounds must be >= 0");
    if (rounds > static_cast<int>(params.rounds.size()))
        throw GraphError("relational_reasoning: not enough parameterized rounds");
    if (rounds == 0) return node_emb;

    const int n = t.val(node_emb).rows();
    const int c = t.val(node_emb).cols();
    const int e = static_cast<int>(incidence.size());

    // mean-aggregation matrix: agg = S * msg, S[i,k] = 1/deg_i if node i is an
    // endpoint of edge k; isolated nodes keep an all-zero row (empty mean = 0)
    Tensor s_mat({n, std::max(e, 1)});
    std::vector<int> degree(static_cast<size_t>(n), 0);
    for (const auto& [i, j] : incidence) {
        degree[static_cast<size_t>(i)]++;
        degree[static_cast<size_t>(j)]++;
    }
    for (int k = 0; k < e; ++k) {
        const auto& [i, j] = incidence[static_cast<size_t>(k)];
        s_mat.at(i, k) = 1.0 / degree[static_cast<size_t>(i)];
        s_mat.at(j, k) = 1.0 / degree[static_cast<size_t>(j)];
    }

    std::vector<int> subj, obj;
    for (const auto& [i, j] : incidence) {
        subj.push_back(i);
        obj.push_back(j);
    }

    ad::Var h = node_emb;
    for (int r = 0; r < rounds; ++r) {
        auto& round = params.rounds[static_cast<size_t>(r)];
        ad::Var w_msg = t.param(round.w_msg);
        ad::Var w_upd = t.param(round.w_upd);

        ad::Var agg;
        if (e > 0) {
            // message = concat(a_i, h_i, e_k, h_j, a_j) * W_msg, realized as a
            // sum of block products to avoid a column-concat op
            ad::Var ai = t.rows_gather(attr_emb, subj);
            ad::Var hi = t.rows_gather(h, subj);
            ad::Var hj = t.rows_gather(h, obj);
            ad::Var aj = t.rows_gather(attr_emb, obj);
            ad::Var msg = t.matmul(ai, t.slice_rows(w_msg, 0, c));
            msg = t.add(msg, t.matmul(hi, t.slice_rows(w_msg, c, c)));
            msg = t.add(msg, t.matmul(edge_emb, t.slice_rows(w_msg, 2 * c, c)));
            msg = t.add(msg, t.matmul(hj, t.slice_rows(w_msg, 3 * c, c)));
            msg = t.add(msg, t.matmul(aj, t.slice_rows(w_msg, 4 * c, c)));
            msg = t.add_rowvec(msg, t.param(round.b_msg));
            agg = t.matmul(t.constant(s_mat), msg);
        } else {
            agg = t.constant(Tensor({n, c}));
        }

        ad::Var self_part = t.matmul(h, t.slice_rows(w_upd, 0, c));
        ad::Var nbr_part = t.matmul(agg, t.slice_rows(w_upd, c, c));
        h = t.silu(t.add_rowvec(t.add(self_part, nbr_part), t.param(round.b_upd)));
    }
    return h;
}

// -------------------------------------------------------------- serialization

namespace {
const json& require_field(const json& j, const char* key, const std::string& path) {
    if (!j.contains(key)) throw SchemaError(path + "." + key, "missing field");
    return j.at(key);
}

int require_int(const json& j, const char* key, const std::string& path) {
    const json& f = require_field(j, key, path);
    if (!f.is_number_integer()) throw SchemaError(path + "." + key, "expected integer");
    return f.get<int>();
}

std::string require_str(const json& j, const char* key, const std::string& path) {
    const json& f = require_field(j, key, path);
    if (!f.is_string()) throw SchemaError(path + "." + key, "expected string");
    return f.get<std::string>();
}
}  // namespace

SceneGraph parse_scene_graph(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw SchemaError("", std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw SchemaError("", "top level must be an object");
    const json& jn = require_field(j, "nodes", "");
    if (!jn.is_array() || jn.empty()) throw SchemaError(".nodes", "expected non-empty array");

    std::vector<ObjectNode> nodes;
    std::set<int> ids;
    for (size_t i = 0; i < jn.size(); ++i) {
        const std::string path = "nodes[" + std::to_string(i) + "]";
        ObjectNode n;
        n.id = require_int(jn[i], "id", path);
        n.category = require_str(jn[i], "category", path);
        n.attribute = require_str(jn[i], "attribute", path);
        if (!ids.insert(n.id).second) throw SchemaError(path + ".id", "duplicate node id");
        nodes.push_back(std::move(n));
    }

    std::vector<RelationEdge> edges;
    if (j.contains("edges")) {
        const json& je = j.at("edges");
        if (!je.is_array()) throw SchemaError(".edges", "expected array");
        for (size_t i = 0; i < je.size(); ++i) {
            const std::string path = "edges[" + std::to_string(i) + "]";
            RelationEdge e;
            e.subject_id = require_int(je[i], "subject", path);
            e.predicate = require_str(je[i], "predicate", path);
            e.object_id = require_int(je[i], "object", path);
            if (!ids.count(e.subject_id))
                throw SchemaError(path + ".subject_id", "no node with this id");
            if (!ids.count(e.object_id))
                throw SchemaError(path + ".object_id", "no node with this id");
            if (e.subject_id == e.object_id)
                throw SchemaError(path + ".object_id", "self-loop edge");
            edges.push_back(std::move(e));
        }
    }

    std::string caption;
    if (j.contains("caption")) {
        if (!j.at("caption").is_string()) throw SchemaError(".caption", "expected string");
        caption = j.at("caption").get<std::string>();
    }
    try {
        return build_graph(std::move(nodes), std::move(edges), std::move(caption));
    } catch (const GraphError& e) {
        throw SchemaError("", e.what());
    }
}

std::string serialize_scene_graph(const SceneGraph& g) {
    json j;
    j["caption"] = g.caption;
    j["nodes"] = json::array();
    for (const auto& n : g.nodes)
        j["nodes"].push_back({{"id", n.id}, {"category", n.category}, {"attribute", n.attribute}});
    j["edges"] = json::array();
    for (const auto& e : g.edges)
        j["edges"].push_back(
            {{"subject", e.subject_id}, {"predicate", e.predicate}, {"object", e.object_id}});
    return j.dump(2);
}

}  // namespace camogen::sg
