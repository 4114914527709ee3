#include <catch2/catch_amalgamated.hpp>

#include <cctype>
#include <set>
#include <string>

#include "sgtrans/structparse.hpp"

using namespace sgtrans;

namespace {

// Finds the node for the k-th occurrence (1-based) of a name.
int node_for(const data_flow_graph& g, const std::string& name, int ordinal) {
    for (std::size_t i = 0; i < g.nodes.size(); ++i)
        if (g.nodes[i].name == name && g.nodes[i].ordinal == ordinal)
            return static_cast<int>(i);
    return -1;
}

bool has_edge(const data_flow_graph& g, int src, int dst, dfg_kind k) {
    for (const auto& e : g.edges)
        if (e.src == src && e.dst == dst && e.kind == k) return true;
    return false;
}

data_flow_graph dfg_of(const std::string& src, language lang) {
    auto all = lex(src, lang);
    std::vector<lex_token> code;
    for (auto& t : all)
        if (t.kind != token_kind::comment) code.push_back(t);
    auto stmts = token_statements(code, lang);
    return extract_dfg(code, stmts, lang);
}

}  // namespace

TEST_CASE("identifier splitting") {
    using V = std::vector<std::string>;
    REQUIRE(split_subtokens("getFileName") == V{"get", "file", "name"});
    REQUIRE(split_subtokens("IsPrime") == V{"is", "prime"});
    REQUIRE(split_subtokens("print_bucket_acl_for_user") ==
            V{"print", "bucket", "acl", "for", "user"});
    REQUIRE(split_subtokens("token_urlsafe") == V{"token", "urlsafe"});
    REQUIRE(split_subtokens("b64encode") == V{"b", "64", "encode"});
    REQUIRE(split_subtokens("x") == V{"x"});
    REQUIRE(split_subtokens("__init__") == V{"init"});
    REQUIRE(split_subtokens("HTTPServer") == V{"httpserver"});
    REQUIRE(split_subtokens("value2") == V{"value", "2"});
    REQUIRE(split_subtokens("___") == V{"___"});
}

TEST_CASE("lexing covers every non-whitespace byte exactly once") {
    const std::string java_src =
        "public static int add(int a, int b) {\n"
        "    // sum of both\n"
        "    String s = \"a + b\"; /* multi\n       line */\n"
        "    return a + b;\n"
        "}\n";
    const std::string py_src =
        "def add(a, b):\n"
        "    # sum of both\n"
        "    s = '''multi\nline'''\n"
        "    t = \"a + b\"\n"
        "    return a + b\n";
    struct case_t {
        std::string src;
        language lang;
    };
    for (const auto& [src, lang] :
         {case_t{java_src, language::java}, case_t{py_src, language::python}}) {
        auto toks = lex(src, lang);
        std::size_t pos = 0;
        for (const auto& t : toks) {
            REQUIRE(t.begin >= pos);
            for (std::size_t q = pos; q < t.begin; ++q)
                REQUIRE(std::isspace(static_cast<unsigned char>(src[q])));
            REQUIRE(src.substr(t.begin, t.end - t.begin) == t.text);
            pos = t.end;
        }
        for (std::size_t q = pos; q < src.size(); ++q)
            REQUIRE(std::isspace(static_cast<unsigned char>(src[q])));
    }
}

TEST_CASE("lexer token classes") {
    auto toks = lex("int a = f(x) + 2; // done", language::java);
    REQUIRE(toks[0].kind == token_kind::keyword);
    REQUIRE(toks[1].kind == token_kind::identifier);
    REQUIRE(toks[2].kind == token_kind::op);
    REQUIRE(toks[3].kind == token_kind::identifier);
    REQUIRE(toks.back().kind == token_kind::comment);
    auto py = lex("x >>= 1 if y else b'q'", language::python);
    REQUIRE(py[1].text == ">>=");
    REQUIRE(py[1].kind == token_kind::op);
    REQUIRE(py.back().kind == token_kind::literal);
    REQUIRE(py.back().text == "b'q'");
}

TEST_CASE("unterminated literals report the line") {
    try {
        lex("int a = 1;\nString s = \"oops;\n", language::java);
        FAIL("expected unterminated_literal");
    } catch (const unterminated_literal& e) {
        REQUIRE(e.line == 2);
    }
    REQUIRE_THROWS_AS(lex("s = '''never closed", language::python), unterminated_literal);
}

TEST_CASE("java statement segmentation attaches separators backwards") {
    auto src = "int a; a = 1;";
    auto toks = lex(src, language::java);
    auto ids = token_statements(toks, language::java);
    // int a ; | a = 1 ;
    REQUIRE(ids == std::vector<int>{0, 0, 0, 1, 1, 1, 1});

    auto brace = lex("if (x) { y = 1; }", language::java);
    auto bids = token_statements(brace, language::java);
    // if ( x ) { | y = 1 ; | }
    REQUIRE(bids == std::vector<int>{0, 0, 0, 0, 0, 1, 1, 1, 1, 2});
}

TEST_CASE("python statements are physical rows") {
    auto toks = lex("a = 1\nb = a + 2\n\nc = b\n", language::python);
    auto ids = token_statements(toks, language::python);
    REQUIRE(ids == std::vector<int>{0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 2});
}

TEST_CASE("statement indices are contiguous and dense") {
    auto check = [](const std::string& src, language lang) {
        auto sc = parse(src, lang);
        int max_stmt = 0;
        for (std::size_t i = 0; i < sc.statement_of.size(); ++i) {
            max_stmt = std::max(max_stmt, sc.statement_of[i]);
            if (i > 0) {
                REQUIRE(sc.statement_of[i] >= sc.statement_of[i - 1]);
                REQUIRE(sc.statement_of[i] - sc.statement_of[i - 1] <= 1);
            }
        }
        std::set<int> seen(sc.statement_of.begin(), sc.statement_of.end());
        REQUIRE(static_cast<int>(seen.size()) == max_stmt + 1);
    };
    check("public int f(int a) { int b = a; return b; }", language::java);
    check("def f(a):\n    b = a\n    return b\n", language::python);
}

TEST_CASE("straight-line def-use edges") {
    auto g = dfg_of("int a = 1; int b = a + 2;", language::java);
    int a1 = node_for(g, "a", 1), a2 = node_for(g, "a", 2), b1 = node_for(g, "b", 1);
    REQUIRE(a1 >= 0);
    REQUIRE(a2 >= 0);
    REQUIRE(b1 >= 0);
    REQUIRE(has_edge(g, a1, a2, dfg_kind::last_write));
    REQUIRE(has_edge(g, a2, b1, dfg_kind::compute_from));
    REQUIRE(g.nodes[a1].is_write);
    REQUIRE(g.nodes[a2].is_read);
}

TEST_CASE("calls and member accesses are not variable occurrences") {
    auto g = dfg_of("boolean r = f.isFile(); g(r); this.x = r;", language::java);
    for (const auto& nd : g.nodes) {
        REQUIRE(nd.name != "isFile");
        REQUIRE(nd.name != "g");
        REQUIRE(nd.name != "x");
    }
    REQUIRE(node_for(g, "r", 1) >= 0);
    REQUIRE(node_for(g, "r", 2) >= 0);
    REQUIRE(node_for(g, "r", 3) >= 0);
}

TEST_CASE("branch join keeps both writers") {
    auto g = dfg_of("int x = 0; if (c) { x = 1; } else { x = 2; } int y = x;",
                    language::java);
    int x2 = node_for(g, "x", 2), x3 = node_for(g, "x", 3), x4 = node_for(g, "x", 4);
    REQUIRE(has_edge(g, x2, x4, dfg_kind::last_write));
    REQUIRE(has_edge(g, x3, x4, dfg_kind::last_write));
    int x1 = node_for(g, "x", 1);
    REQUIRE_FALSE(has_edge(g, x1, x4, dfg_kind::last_write));
}

TEST_CASE("branch without else keeps the pre-branch writer") {
    auto g = dfg_of("int x = 0; if (c) { x = 1; } int y = x;", language::java);
    int x1 = node_for(g, "x", 1), x2 = node_for(g, "x", 2), x3 = node_for(g, "x", 3);
    REQUIRE(has_edge(g, x1, x3, dfg_kind::last_write));
    REQUIRE(has_edge(g, x2, x3, dfg_kind::last_write));
}

TEST_CASE("java for loop carries values backwards") {
    auto g = dfg_of(
        "public static boolean IsPrime(int num) {\n"
        "    boolean flag = false;\n"
        "    for (int i = 2; i <= num / 2; i = i + 1) {\n"
        "        if (num % i == 0) {\n"
        "            flag = true;\n"
        "            break;\n"
        "        }\n"
        "    }\n"
        "    if (!flag) return true; else return false;\n"
        "}\n",
        language::java);
    int i1 = node_for(g, "i", 1);  // for-init write
    int i2 = node_for(g, "i", 2);  // condition read
    int i3 = node_for(g, "i", 3);  // update write
    int i4 = node_for(g, "i", 4);  // update operand read
    int i5 = node_for(g, "i", 5);  // body read
    REQUIRE(i5 >= 0);
    REQUIRE(has_edge(g, i1, i2, dfg_kind::last_write));
    REQUIRE(has_edge(g, i1, i4, dfg_kind::last_write));
    REQUIRE(has_edge(g, i4, i3, dfg_kind::compute_from));
    REQUIRE(has_edge(g, i3, i5, dfg_kind::last_write));
    REQUIRE(has_edge(g, i3, i2, dfg_kind::loop_back));
    REQUIRE(has_edge(g, i3, i4, dfg_kind::loop_back));

    // the update write both feeds and is fed by the operand read: a cycle
    REQUIRE(has_edge(g, i4, i3, dfg_kind::compute_from));
    REQUIRE(has_edge(g, i3, i4, dfg_kind::loop_back));

    // parameter flows into the loop condition
    int num1 = node_for(g, "num", 1), num2 = node_for(g, "num", 2);
    REQUIRE(g.nodes[num1].is_write);
    REQUIRE(has_edge(g, num1, num2, dfg_kind::last_write));
}

TEST_CASE("python loop accumulator") {
    auto g = dfg_of(
        "def f(n):\n"
        "    total = 0\n"
        "    for i in range(n):\n"
        "        total = total + i\n"
        "    return total\n",
        language::python);
    int t1 = node_for(g, "total", 1);  // initial write
    int t2 = node_for(g, "total", 2);  // loop-body write
    int t3 = node_for(g, "total", 3);  // loop-body read
    int t4 = node_for(g, "total", 4);  // return read
    int i1 = node_for(g, "i", 1), i2 = node_for(g, "i", 2);
    int n1 = node_for(g, "n", 1), n2 = node_for(g, "n", 2);
    REQUIRE(has_edge(g, n1, n2, dfg_kind::last_write));
    REQUIRE(has_edge(g, n2, i1, dfg_kind::compute_from));
    REQUIRE(has_edge(g, t1, t3, dfg_kind::last_write));
    REQUIRE(has_edge(g, t3, t2, dfg_kind::compute_from));
    REQUIRE(has_edge(g, i2, t2, dfg_kind::compute_from));
    REQUIRE(has_edge(g, t2, t3, dfg_kind::loop_back));
    REQUIRE(has_edge(g, t2, t4, dfg_kind::last_write));
}

TEST_CASE("python branch join") {
    auto g = dfg_of(
        "def f(c):\n"
        "    x = 0\n"
        "    if c:\n"
        "        x = 1\n"
        "    else:\n"
        "        x = 2\n"
        "    return x\n",
        language::python);
    int x2 = node_for(g, "x", 2), x3 = node_for(g, "x", 3), x4 = node_for(g, "x", 4);
    REQUIRE(has_edge(g, x2, x4, dfg_kind::last_write));
    REQUIRE(has_edge(g, x3, x4, dfg_kind::last_write));
    REQUIRE_FALSE(has_edge(g, node_for(g, "x", 1), x4, dfg_kind::last_write));
}

TEST_CASE("edge endpoints map to sub-token ranges") {
    auto sc = parse("int fileName = 1; int b = fileName;", language::java);
    bool found = false;
    for (const auto& nd : sc.dfg.nodes) {
        REQUIRE(nd.sub_lo >= 0);
        REQUIRE(nd.sub_hi > nd.sub_lo);
        REQUIRE(nd.sub_hi <= static_cast<int>(sc.sub_tokens.size()));
        if (nd.name == "fileName") {
            REQUIRE(nd.sub_hi - nd.sub_lo == 2);
            REQUIRE(sc.sub_tokens[nd.sub_lo] == "file");
            REQUIRE(sc.sub_tokens[nd.sub_lo + 1] == "name");
            found = true;
        }
    }
    REQUIRE(found);
}

TEST_CASE("sub-token bookkeeping stays aligned") {
    auto sc = parse("def getData(a):\n    return a\n", language::python);
    REQUIRE(sc.sub_tokens.size() == sc.token_of.size());
    REQUIRE(sc.sub_tokens.size() == sc.statement_of.size());
    // get data expand from one token
    int tok = -1;
    for (std::size_t i = 0; i < sc.sub_tokens.size(); ++i) {
        if (sc.sub_tokens[i] == "get") {
            tok = sc.token_of[i];
            REQUIRE(sc.sub_tokens[i + 1] == "data");
            REQUIRE(sc.token_of[i + 1] == tok);
        }
    }
    REQUIRE(tok >= 0);
}

TEST_CASE("empty source is rejected") {
    REQUIRE_THROWS_AS(parse("   \n  ", language::java), empty_input);
    REQUIRE_THROWS_AS(parse("# only a comment\n", language::python), empty_input);
}
