"""Parsing, serialization, and traversal of binary s-expression trees."""

import pytest

from treentail.trees import (
    BinaryTree,
    EmptyInput,
    NonBinaryNode,
    TreeParseError,
    UnbalancedParens,
    node_phrases,
    parse_tree,
    post_order,
    serialize,
)


class TestParse:
    def test_single_token_is_a_one_node_tree(self):
        t = parse_tree("cat")
        assert t.node_count == 1
        assert t.is_leaf(0)
        assert t.tokens == ("cat",)

    def test_two_leaf_tree(self):
        t = parse_tree("( the cat )")
        assert t.node_count == 3
        assert t.root == 2
        assert not t.is_leaf(t.root)
        assert t.leaves() == ["the", "cat"]

    def test_ids_are_post_order(self):
        """Children must always carry smaller ids than their parent."""
        t = parse_tree("( ( a ( b c ) ) ( d e ) )")
        for i in range(t.node_count):
            if not t.is_leaf(i):
                assert t.lefts[i] < i
                assert t.rights[i] < i
        assert post_order(t) == list(range(t.node_count))

    def test_parens_flush_against_tokens(self):
        # SNLI-style binary parses have no guaranteed spacing.
        t = parse_tree("((the cat) sleeps)")
        assert t.leaves() == ["the", "cat", "sleeps"]

    def test_escaped_bracket_tokens_survive(self):
        t = parse_tree("( -LRB- -RRB- )")
        assert t.leaves() == ["-LRB-", "-RRB-"]

    def test_deep_left_branching(self):
        text = "( ( ( ( a b ) c ) d ) e )"
        t = parse_tree(text)
        assert t.node_count == 9
        assert t.leaves() == list("abcde")

    @pytest.mark.parametrize("bad", ["", "   ", "\n\t"])
    def test_empty_input(self, bad):
        with pytest.raises(EmptyInput):
            parse_tree(bad)

    @pytest.mark.parametrize("bad", [
        "( a b",          # missing close
        "a b )",          # stray close after leaf... trailing content
        "( a b ) )",      # extra close
        "( a b ) extra",  # trailing token
        "(",              # open and nothing else
        ")",              # close and nothing else
        "( a b ) ( c d )",  # two roots
    ])
    def test_unbalanced_or_trailing(self, bad):
        with pytest.raises(UnbalancedParens):
            parse_tree(bad)

    @pytest.mark.parametrize("bad", ["( a )", "( a b c )", "( )"])
    def test_non_binary_nodes(self, bad):
        with pytest.raises(NonBinaryNode):
            parse_tree(bad)

    def test_errors_are_value_errors(self):
        # Callers catch the family root both as TreeParseError and ValueError.
        for bad, kind in [("", EmptyInput), ("( a", UnbalancedParens),
                          ("( a )", NonBinaryNode)]:
            with pytest.raises(TreeParseError):
                parse_tree(bad)
            with pytest.raises(ValueError):
                parse_tree(bad)
            assert issubclass(kind, TreeParseError)


class TestSerialize:
    def test_canonical_form(self):
        t = parse_tree("((the cat)sleeps)")
        assert serialize(t) == "( ( the cat ) sleeps )"

    def test_round_trip_is_identity_on_canonical_text(self):
        text = "( ( a ( b c ) ) ( ( d e ) f ) )"
        assert serialize(parse_tree(text)) == text

    def test_parse_serialize_parse_fixed_point(self):
        for text in ["tok", "( a b )", "( ( a b ) ( c ( d e ) ) )"]:
            t = parse_tree(text)
            assert parse_tree(serialize(t)) == t


class TestStructure:
    def test_construction_rejects_forward_children(self):
        with pytest.raises(NonBinaryNode):
            BinaryTree(tokens=(None, "a", "b"), lefts=(1, -1, -1), rights=(2, -1, -1))

    def test_post_order_walks_structure_not_indices(self):
        t = parse_tree("( ( a b ) ( c d ) )")
        order = post_order(t)
        # Left subtree root (id 2) must precede the right subtree's leaves.
        assert order.index(2) < order.index(3)
        assert order == sorted(order)

    def test_node_phrases(self):
        t = parse_tree("( ( the cat ) ( eats fish ) )")
        phrases = node_phrases(t)
        assert phrases[t.root] == "the cat eats fish"
        assert phrases[2] == "the cat"
        assert sorted(p for i, p in enumerate(phrases) if t.is_leaf(i)) == [
            "cat", "eats", "fish", "the",
        ]

    def test_leaves_in_surface_order(self):
        t = parse_tree("( ( ( a b ) c ) ( d ( e f ) ) )")
        assert t.leaves() == list("abcdef")
