#pragma once

#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace icegraph {

// One line of a formalized reasoning representation (FRR). Two forms:
//
//   total_fruits = 36                                 constant assignment
//   fruits_per_type = [divide](total_fruits, types)   derivation
//
// Identifiers are bare (letters, digits, underscore, not starting with a
// digit) or double-quoted strings whose interior is preserved exactly.
// Derivation inputs may additionally be numeric literals; those become
// source vertices named by the number itself.
struct ConstAssign {
    std::string ident;
    std::string literal;
    bool operator==(const ConstAssign&) const = default;
};

struct Derivation {
    std::string output;
    std::string op_name;
    std::vector<std::string> inputs;  // non-empty
    bool operator==(const Derivation&) const = default;
};

using Statement = std::variant<ConstAssign, Derivation>;

enum class NodeKind { Source, Derived };

struct Node {
    int id = 0;  // dense 0..n-1, first-appearance order
    std::string name;
    std::string text;  // embedded text: op_name for derived, name for source
    NodeKind kind = NodeKind::Source;
    std::optional<std::string> op_name;
    std::optional<std::string> literal;
    bool operator==(const Node&) const = default;
};

// Vertex-attributed DAG of reasoning steps. Edges point from an input to
// the statement output that consumes it.
struct ThoughtGraph {
    std::vector<Node> nodes;
    std::vector<std::pair<int, int>> edges;  // (from, to), deduplicated

    std::size_t node_count() const { return nodes.size(); }
    std::size_t edge_count() const { return edges.size(); }
    std::size_t in_degree(int node_id) const;
    std::size_t out_degree(int node_id) const;
    std::optional<int> find_node(const std::string& name) const;

    bool operator==(const ThoughtGraph&) const = default;
};

enum class ParseMode { Lenient, Strict };

// Parses one non-empty line. Throws GrammarError (with byte offset) when the
// line matches neither statement form.
Statement parse_statement(const std::string& line);

// Splits FRR text into statements, one per line. Lenient mode skips blank
// lines and lines that fail to parse; strict mode throws on the first bad
// non-blank line.
std::vector<Statement> parse_frr(const std::string& text, ParseMode mode = ParseMode::Lenient);

// Builds the thought graph from statements in source order: unseen inputs
// become source vertices, unseen outputs become derived vertices labeled
// with their operation name, and each (input, output) pair contributes one
// edge. Re-deriving an existing name adds edges into the existing vertex.
// Throws CycleError when the result contains a directed cycle.
ThoughtGraph build_graph(const std::vector<Statement>& statements);

// Removes source vertices that stand for raw numbers (numeric name, and a
// numeric literal if any), re-densifying ids in order. Opt-in pass; the
// default pipeline keeps such vertices.
ThoughtGraph prune_numeric_leaves(const ThoughtGraph& g);

// Versioned JSON interchange: {version:1, nodes:[...], edges:[[from,to]]}.
// from_json re-runs all structural invariant checks and throws SchemaError
// on any violation or unknown version.
std::string to_json(const ThoughtGraph& g);
ThoughtGraph from_json(const std::string& bytes);

// Deterministic DOT rendering; derived vertices labeled "name : op_name".
std::string to_dot(const ThoughtGraph& g);

// True when the token parses as a plain decimal number.
bool is_numeric_token(const std::string& token);

}  // namespace icegraph
