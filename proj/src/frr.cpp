#include "icegraph/frr.hpp"

#include <algorithm>
#include <cctype>
#include <deque>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "icegraph/errors.hpp"
#include "nlohmann/json.hpp"

namespace icegraph {

namespace {

using nlohmann::json;

bool is_ident_start(char c) {
    return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
}

bool is_ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

bool is_space(char c) {
    return std::isspace(static_cast<unsigned char>(c));
}

[[noreturn]] void fail(const std::string& msg, std::size_t offset) {
    throw GrammarError(msg + " (byte offset " + std::to_string(offset) + ")", offset);
}

struct Cursor {
    const std::string& s;
    std::size_t i = 0;

    void skip_ws() {
        while (i < s.size() && is_space(s[i])) ++i;
    }
    bool done() const { return i >= s.size(); }
    char peek() const { return s[i]; }
};

// Quoted token: interior preserved exactly, no escape processing.
std::string read_quoted(Cursor& cur) {
    const std::size_t start = cur.i;
    ++cur.i;  // opening quote
    const std::size_t begin = cur.i;
    while (cur.i < cur.s.size() && cur.s[cur.i] != '"') ++cur.i;
    if (cur.done()) fail("unterminated quoted identifier", start);
    std::string out = cur.s.substr(begin, cur.i - begin);
    ++cur.i;  // closing quote
    return out;
}

std::string read_bare_ident(Cursor& cur) {
    const std::size_t begin = cur.i;
    while (cur.i < cur.s.size() && is_ident_char(cur.s[cur.i])) ++cur.i;
    return cur.s.substr(begin, cur.i - begin);
}

// Identifier on the left-hand side: bare or quoted.
std::string read_lhs_ident(Cursor& cur) {
    if (cur.done()) fail("expected identifier", cur.i);
    if (cur.peek() == '"') return read_quoted(cur);
    if (!is_ident_start(cur.peek())) fail("expected identifier", cur.i);
    return read_bare_ident(cur);
}

// Derivation argument: quoted string, bare identifier, or numeric literal.
std::string read_argument(Cursor& cur) {
    if (cur.peek() == '"') return read_quoted(cur);
    const std::size_t begin = cur.i;
    while (cur.i < cur.s.size()) {
        const char c = cur.s[cur.i];
        if (c == ',' || c == ')' || c == '(' || c == '[' || c == ']' || c == '"' || is_space(c)) {
            break;
        }
        ++cur.i;
    }
    std::string tok = cur.s.substr(begin, cur.i - begin);
    if (tok.empty()) fail("empty argument", begin);
    if (!is_ident_start(tok[0]) && !is_numeric_token(tok)) {
        fail("argument is neither an identifier nor a number", begin);
    }
    return tok;
}

}  // namespace

bool is_numeric_token(const std::string& token) {
    std::size_t i = 0;
    if (i < token.size() && (token[i] == '+' || token[i] == '-')) ++i;
    std::size_t digits = 0;
    while (i < token.size() && std::isdigit(static_cast<unsigned char>(token[i]))) {
        ++i;
        ++digits;
    }
    if (i < token.size() && token[i] == '.') {
        ++i;
        while (i < token.size() && std::isdigit(static_cast<unsigned char>(token[i]))) {
            ++i;
            ++digits;
        }
    }
    return digits > 0 && i == token.size();
}

Statement parse_statement(const std::string& line) {
    Cursor cur{line};
    cur.skip_ws();
    if (cur.done()) fail("empty line", 0);

    std::string lhs = read_lhs_ident(cur);
    cur.skip_ws();
    if (cur.done() || cur.peek() != '=') fail("expected '='", cur.i);
    ++cur.i;
    cur.skip_ws();
    if (cur.done()) fail("expected value after '='", cur.i);

    if (cur.peek() == '[') {
        const std::size_t op_open = cur.i;
        ++cur.i;
        const std::size_t op_begin = cur.i;
        while (cur.i < cur.s.size() && cur.s[cur.i] != ']') ++cur.i;
        if (cur.done()) fail("unterminated operation name", op_open);
        std::string op = line.substr(op_begin, cur.i - op_begin);
        // Trim surrounding whitespace inside the brackets.
        const auto first = op.find_first_not_of(" \t");
        const auto last = op.find_last_not_of(" \t");
        op = (first == std::string::npos) ? "" : op.substr(first, last - first + 1);
        if (op.empty()) fail("empty operation name", op_open);
        ++cur.i;  // ']'
        cur.skip_ws();
        if (cur.done() || cur.peek() != '(') fail("expected '(' after operation name", cur.i);
        ++cur.i;

        std::vector<std::string> inputs;
        while (true) {
            cur.skip_ws();
            if (cur.done()) fail("unterminated argument list", cur.i);
            if (cur.peek() == ')') {
                if (inputs.empty()) fail("empty argument list", cur.i);
                ++cur.i;
                break;
            }
            inputs.push_back(read_argument(cur));
            cur.skip_ws();
            if (cur.done()) fail("unterminated argument list", cur.i);
            if (cur.peek() == ',') {
                ++cur.i;
            } else if (cur.peek() != ')') {
                fail("expected ',' or ')'", cur.i);
            }
        }
        cur.skip_ws();
        if (!cur.done()) fail("trailing characters after derivation", cur.i);
        return Derivation{std::move(lhs), std::move(op), std::move(inputs)};
    }

    // Bare (or quoted) literal constant.
    if (cur.peek() == '"') {
        std::string lit = read_quoted(cur);
        cur.skip_ws();
        if (!cur.done()) fail("trailing characters after literal", cur.i);
        return ConstAssign{std::move(lhs), std::move(lit)};
    }
    const std::size_t lit_begin = cur.i;
    for (std::size_t j = cur.i; j < line.size(); ++j) {
        const char c = line[j];
        if (c == '(' || c == ')' || c == '[' || c == ']' || c == '"' || c == '=') {
            fail("right-hand side is neither a bare literal nor [op](args)", j);
        }
    }
    std::size_t lit_end = line.size();
    while (lit_end > lit_begin && is_space(line[lit_end - 1])) --lit_end;
    return ConstAssign{std::move(lhs), line.substr(lit_begin, lit_end - lit_begin)};
}

std::vector<Statement> parse_frr(const std::string& text, ParseMode mode) {
    std::vector<Statement> out;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos <= text.size()) {
        std::size_t nl = text.find('\n', pos);
        std::string line =
            (nl == std::string::npos) ? text.substr(pos) : text.substr(pos, nl - pos);
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const bool blank = line.find_first_not_of(" \t") == std::string::npos;
        if (!blank) {
            try {
                out.push_back(parse_statement(line));
            } catch (const GrammarError& e) {
                if (mode == ParseMode::Strict) {
                    throw GrammarError("line " + std::to_string(line_no) + ": " + e.what(),
                                       e.offset);
                }
            }
        }
        if (nl == std::string::npos) break;
        pos = nl + 1;
    }
    return out;
}

namespace {

void check_acyclic(const ThoughtGraph& g) {
    const std::size_t n = g.nodes.size();
    std::vector<std::size_t> indeg(n, 0);
    std::vector<std::vector<int>> adj(n);
    for (const auto& [from, to] : g.edges) {
        adj[static_cast<std::size_t>(from)].push_back(to);
        ++indeg[static_cast<std::size_t>(to)];
    }
    std::deque<int> ready;
    for (std::size_t i = 0; i < n; ++i)
        if (indeg[i] == 0) ready.push_back(static_cast<int>(i));
    std::size_t visited = 0;
    while (!ready.empty()) {
        int u = ready.front();
        ready.pop_front();
        ++visited;
        for (int v : adj[static_cast<std::size_t>(u)]) {
            if (--indeg[static_cast<std::size_t>(v)] == 0) ready.push_back(v);
        }
    }
    if (visited != n) throw CycleError("statement list produces a directed cycle");
}

}  // namespace

std::size_t ThoughtGraph::in_degree(int node_id) const {
    std::size_t d = 0;
    for (const auto& [from, to] : edges)
        if (to == node_id) ++d;
    return d;
}

std::size_t ThoughtGraph::out_degree(int node_id) const {
    std::size_t d = 0;
    for (const auto& [from, to] : edges)
        if (from == node_id) ++d;
    return d;
}

std::optional<int> ThoughtGraph::find_node(const std::string& name) const {
    for (const auto& node : nodes)
        if (node.name == name) return node.id;
    return std::nullopt;
}

ThoughtGraph build_graph(const std::vector<Statement>& statements) {
    ThoughtGraph g;
    std::unordered_map<std::string, int> by_name;
    std::set<std::pair<int, int>> edge_set;

    auto add_node = [&](const std::string& name, NodeKind kind,
                        std::optional<std::string> op_name,
                        std::optional<std::string> literal) -> int {
        const int id = static_cast<int>(g.nodes.size());
        Node node;
        node.id = id;
        node.name = name;
        node.kind = kind;
        node.op_name = std::move(op_name);
        node.literal = std::move(literal);
        node.text = (kind == NodeKind::Derived) ? *node.op_name : name;
        g.nodes.push_back(std::move(node));
        by_name.emplace(name, id);
        return id;
    };

    for (const auto& stmt : statements) {
        if (const auto* ca = std::get_if<ConstAssign>(&stmt)) {
            auto it = by_name.find(ca->ident);
            if (it == by_name.end()) {
                add_node(ca->ident, NodeKind::Source, std::nullopt, ca->literal);
            } else {
                g.nodes[static_cast<std::size_t>(it->second)].literal = ca->literal;
            }
        } else {
            const auto& d = std::get<Derivation>(stmt);
            for (const auto& input : d.inputs) {
                if (!by_name.contains(input)) {
                    add_node(input, NodeKind::Source, std::nullopt, std::nullopt);
                }
            }
            int out_id;
            auto it = by_name.find(d.output);
            if (it == by_name.end()) {
                out_id = add_node(d.output, NodeKind::Derived, d.op_name, std::nullopt);
            } else {
                out_id = it->second;
            }
            for (const auto& input : d.inputs) {
                std::pair<int, int> e{by_name.at(input), out_id};
                if (edge_set.insert(e).second) g.edges.push_back(e);
            }
        }
    }

    check_acyclic(g);
    return g;
}

namespace {

bool has_alpha(const std::string& s) {
    return std::any_of(s.begin(), s.end(),
                       [](char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; });
}

bool is_numeric_leaf(const Node& node) {
    if (node.kind != NodeKind::Source) return false;
    if (node.literal && !is_numeric_token(*node.literal)) return false;
    return is_numeric_token(node.name) || !has_alpha(node.name);
}

}  // namespace

ThoughtGraph prune_numeric_leaves(const ThoughtGraph& g) {
    std::vector<int> remap(g.nodes.size(), -1);
    ThoughtGraph out;
    for (const auto& node : g.nodes) {
        if (is_numeric_leaf(node)) continue;
        Node kept = node;
        kept.id = static_cast<int>(out.nodes.size());
        remap[static_cast<std::size_t>(node.id)] = kept.id;
        out.nodes.push_back(std::move(kept));
    }
    for (const auto& [from, to] : g.edges) {
        const int f = remap[static_cast<std::size_t>(from)];
        const int t = remap[static_cast<std::size_t>(to)];
        if (f >= 0 && t >= 0) out.edges.emplace_back(f, t);
    }
    return out;
}

namespace {

constexpr int kGraphSchemaVersion = 1;

void validate_graph(const ThoughtGraph& g) {
    const std::size_t n = g.nodes.size();
    std::unordered_set<std::string> names;
    for (std::size_t i = 0; i < n; ++i) {
        const Node& node = g.nodes[i];
        if (node.id != static_cast<int>(i)) {
            throw SchemaError("node ids must be dense 0..n-1 in order");
        }
        if (!names.insert(node.name).second) {
            throw SchemaError("duplicate node name: " + node.name);
        }
        if (node.kind == NodeKind::Derived) {
            if (!node.op_name) throw SchemaError("derived node without op_name: " + node.name);
            if (node.text != *node.op_name) {
                throw SchemaError("derived node text must equal op_name: " + node.name);
            }
        } else {
            if (node.op_name) throw SchemaError("source node with op_name: " + node.name);
            if (node.text != node.name) {
                throw SchemaError("source node text must equal name: " + node.name);
            }
        }
    }
    std::set<std::pair<int, int>> seen;
    for (const auto& [from, to] : g.edges) {
        if (from < 0 || to < 0 || from >= static_cast<int>(n) || to >= static_cast<int>(n)) {
            throw SchemaError("edge references unknown node id");
        }
        if (from == to) throw SchemaError("self-loop edge");
        if (!seen.insert({from, to}).second) throw SchemaError("duplicate edge");
    }
    try {
        check_acyclic(g);
    } catch (const CycleError& e) {
        throw SchemaError(e.what());
    }
}

}  // namespace

std::string to_json(const ThoughtGraph& g) {
    json nodes = json::array();
    for (const auto& node : g.nodes) {
        json jn = {
            {"id", node.id},
            {"name", node.name},
            {"text", node.text},
            {"kind", node.kind == NodeKind::Derived ? "derived" : "source"},
        };
        if (node.op_name) jn["op_name"] = *node.op_name;
        if (node.literal) jn["literal"] = *node.literal;
        nodes.push_back(std::move(jn));
    }
    json edges = json::array();
    for (const auto& [from, to] : g.edges) edges.push_back(json::array({from, to}));
    json j = {{"version", kGraphSchemaVersion}, {"nodes", std::move(nodes)},
              {"edges", std::move(edges)}};
    return j.dump();
}

ThoughtGraph from_json(const std::string& bytes) {
    json j;
    try {
        j = json::parse(bytes);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("invalid JSON: ") + e.what());
    }
    ThoughtGraph g;
    try {
        if (!j.is_object() || j.at("version").get<int>() != kGraphSchemaVersion) {
            throw SchemaError("unknown graph schema version");
        }
        for (const auto& jn : j.at("nodes")) {
            Node node;
            node.id = jn.at("id").get<int>();
            node.name = jn.at("name").get<std::string>();
            node.text = jn.at("text").get<std::string>();
            const std::string kind = jn.at("kind").get<std::string>();
            if (kind == "source") {
                node.kind = NodeKind::Source;
            } else if (kind == "derived") {
                node.kind = NodeKind::Derived;
            } else {
                throw SchemaError("unknown node kind: " + kind);
            }
            if (jn.contains("op_name")) node.op_name = jn.at("op_name").get<std::string>();
            if (jn.contains("literal")) node.literal = jn.at("literal").get<std::string>();
            g.nodes.push_back(std::move(node));
        }
        for (const auto& je : j.at("edges")) {
            if (!je.is_array() || je.size() != 2) throw SchemaError("edge must be [from, to]");
            g.edges.emplace_back(je.at(0).get<int>(), je.at(1).get<int>());
        }
    } catch (const json::exception& e) {
        throw SchemaError(std::string("malformed graph JSON: ") + e.what());
    }
    validate_graph(g);
    return g;
}

namespace {

std::string dot_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '\\' || c == '"') out += '\\';
        out += c;
    }
    return out;
}

}  // namespace

std::string to_dot(const ThoughtGraph& g) {
    std::string out = "digraph g {\n";
    for (const auto& node : g.nodes) {
        std::string label = node.name;
        if (node.kind == NodeKind::Derived) label += " : " + *node.op_name;
        out += "  \"" + std::to_string(node.id) + "\" [label=\"" + dot_escape(label) + "\"];\n";
    }
    for (const auto& [from, to] : g.edges) {
        out += "  \"" + std::to_string(from) + "\" -> \"" + std::to_string(to) + "\";\n";
    }
    out += "}\n";
    return out;
}

}  // namespace icegraph
