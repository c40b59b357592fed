"""Tests for the game DSL: parsing, validation and canonical serialization."""

import json

import pytest
from pydantic import ValidationError

from app.core.exceptions import GameSpecError, SpecValidationError
from app.schemas.game import Block, Expr, HatKind, Opcode
from app.services.game_spec_service import format_number, game_spec_service

from .conftest import MINIMAL_GAME


class TestParse:

    def test_minimal_document(self, minimal_spec) -> None:
        """One sprite with one greenFlag script."""
        assert minimal_spec.name == "Minimal"
        assert len(minimal_spec.sprites) == 1
        sprite = minimal_spec.sprites[0]
        assert len(sprite.scripts) == 1
        assert sprite.scripts[0].hat == HatKind.GREEN_FLAG
        assert sprite.scripts[0].body[0].opcode == Opcode.MOVE
        assert sprite.scripts[0].body[0].args == [Expr.num(10)]

    def test_duplicate_sprite_names(self) -> None:
        text = MINIMAL_GAME + "sprite name=Cat\n  costume id=other radius=5\n"
        with pytest.raises(SpecValidationError) as info:
            game_spec_service.parse_game(text)
        assert [issue.rule for issue in info.value.issues] == ["duplicate-sprite"]

    def test_duplicate_block_ids(self) -> None:
        text = MINIMAL_GAME + "    b1 move 5\n"
        with pytest.raises(SpecValidationError) as info:
            game_spec_service.parse_game(text)
        assert any(issue.rule == "duplicate-id" and issue.block_id == "b1" for issue in info.value.issues)

    def test_unknown_opcode_reports_position(self) -> None:
        text = MINIMAL_GAME.replace("b1 move 10", "b1 jump 10")
        with pytest.raises(GameSpecError) as info:
            game_spec_service.parse_game(text)
        assert info.value.line == 5
        assert "jump" in info.value.message

    def test_unbalanced_parenthesis(self) -> None:
        text = MINIMAL_GAME.replace("b1 move 10", "b1 move (+ 1 2")
        with pytest.raises(GameSpecError, match="missing"):
            game_spec_service.parse_game(text)

    def test_odd_indentation_rejected(self) -> None:
        text = MINIMAL_GAME.replace("    b1 move 10", "     b1 move 10")
        with pytest.raises(GameSpecError, match="multiple of two"):
            game_spec_service.parse_game(text)

    def test_if_else_bodies(self, fruit_spec) -> None:
        clock = fruit_spec.sprite("Clock")
        branch = clock.scripts[0].body[1]
        assert branch.opcode == Opcode.IF_ELSE
        assert [b.id for b in branch.bodies[0]] == ["won"]
        assert [b.id for b in branch.bodies[1]] == ["t5"]

    def test_type_error_on_numeric_condition(self) -> None:
        text = MINIMAL_GAME.replace("b1 move 10", "b1 if (+ 1 2)\n      b2 move 1")
        with pytest.raises(SpecValidationError) as info:
            game_spec_service.parse_game(text)
        assert info.value.issues[0].rule == "type"
        assert info.value.issues[0].line == 5


class TestValidate:

    def test_bundled_games_are_valid(self, fruit_spec, mole_spec) -> None:
        assert game_spec_service.validate_spec(fruit_spec) == []
        assert game_spec_service.validate_spec(mole_spec) == []

    def test_unknown_win_statement(self, fruit_spec) -> None:
        broken = fruit_spec.model_copy(update={"win_statements": ["won", "nowhere"]})
        issues = game_spec_service.validate_spec(broken)
        assert len(issues) == 1
        assert issues[0].rule == "unresolved-win"
        assert issues[0].block_id == "nowhere"

    def test_clone_hat_on_plain_sprite(self) -> None:
        text = MINIMAL_GAME + "  script hat=whenIStartAsClone id=hat2\n    b2 show\n"
        with pytest.raises(SpecValidationError) as info:
            game_spec_service.parse_game(text)
        assert len(info.value.issues) == 1
        assert info.value.issues[0].rule == "clone-hat"

    def test_unresolved_variable(self) -> None:
        text = MINIMAL_GAME.replace("b1 move 10", "b1 move (var speed)")
        with pytest.raises(SpecValidationError) as info:
            game_spec_service.parse_game(text)
        assert info.value.issues[0].rule == "unresolved-variable"

    def test_names_must_be_identifiers(self, minimal_spec, walker_spec) -> None:
        broken = minimal_spec.model_copy(deep=True)
        broken.sprites[0].name = "Big Cat"
        broken.sprites[0].costumes[0].id = "cat\nsprite"
        issues = game_spec_service.validate_spec(broken)
        assert [(i.rule, i.block_id) for i in issues] == [("identifier", "Big Cat"), ("identifier", "Big Cat")]

        renamed = walker_spec.model_copy(deep=True)
        renamed.variables[0].name = "step count"
        rules = {(i.rule, i.block_id) for i in game_spec_service.validate_spec(renamed)}
        assert ("identifier", "step count") in rules

    def test_issues_are_frozen(self, fruit_spec) -> None:
        broken = fruit_spec.model_copy(update={"win_statements": ["nowhere"]})
        issue = game_spec_service.validate_spec(broken)[0]
        with pytest.raises(ValidationError):
            issue.rule = "other"

    def test_report_is_json_lines(self, fruit_spec) -> None:
        broken = fruit_spec.model_copy(update={"win_statements": ["x1", "x2"]})
        report = game_spec_service.report_jsonl(game_spec_service.validate_spec(broken))
        records = [json.loads(line) for line in report.splitlines()]
        assert [r["block_id"] for r in records] == ["x1", "x2"]
        assert set(records[0]) == {"block_id", "rule", "message"}


class TestSerialize:

    @pytest.mark.parametrize("filename", ["fruit_catching.game", "mole_whacker.game"])
    def test_round_trip(self, games_dir, filename) -> None:
        """parse(serialize(parse(doc))) is structurally equal to parse(doc)."""
        spec = game_spec_service.load_game(str(games_dir / filename))
        again = game_spec_service.parse_game(game_spec_service.serialize_game(spec))
        assert again == spec

    def test_canonical_form_is_a_fixed_point(self, mole_spec) -> None:
        canonical = game_spec_service.serialize_game(mole_spec)
        assert game_spec_service.serialize_game(mole_spec) == canonical
        assert game_spec_service.serialize_game(game_spec_service.parse_game(canonical)) == canonical

    def test_text_with_line_breaks_survives(self, minimal_spec) -> None:
        text = 'two\nlines, a "quote" and a back\\slash\r'
        spec = minimal_spec.model_copy(deep=True)
        spec.sprites[0].scripts[0].body[0] = Block(id="b1", opcode=Opcode.SAY, args=[Expr.text(text)])
        canonical = game_spec_service.serialize_game(spec)
        assert len(canonical.splitlines()) == len(game_spec_service.serialize_game(minimal_spec).splitlines())
        again = game_spec_service.parse_game(canonical)
        assert again.sprites[0].scripts[0].body[0].args[0].value == text

    def test_header_keys_are_sorted(self, minimal_spec) -> None:
        lines = game_spec_service.serialize_game(minimal_spec).splitlines()
        assert lines[0] == "game name=Minimal"
        assert lines[1] == "sprite clonable=false direction=90 name=Cat rotation=all_around size=100 x=0 y=0"
        assert lines[2] == "  costume id=cat radius=10"
        assert lines[3] == "  script hat=greenFlag id=hat1"
        assert lines[4] == "    b1 move 10"

    def test_single_change_touches_one_line(self, minimal_spec) -> None:
        mutant = minimal_spec.model_copy(deep=True)
        mutant.sprites[0].scripts[0].body[0].args = [Expr.num(-10)]
        before = game_spec_service.serialize_game(minimal_spec).splitlines()
        after = game_spec_service.serialize_game(mutant).splitlines()
        changed = [i for i, (a, b) in enumerate(zip(before, after)) if a != b]
        assert changed == [4]

    @pytest.mark.parametrize("value,expected", [(10.0, "10"), (0.5, "0.5"), (-0.0, "0"), (0.1, "0.1"), (-3.0, "-3")])
    def test_format_number(self, value, expected) -> None:
        assert format_number(value) == expected


class TestQueries:

    def test_keys_mentioned(self, fruit_spec, walker_spec) -> None:
        assert game_spec_service.keys_mentioned(fruit_spec) == ["left", "right", "space"]
        assert game_spec_service.keys_mentioned(walker_spec) == ["right"]

    def test_statement_ids_in_document_order(self, walker_spec) -> None:
        assert walker_spec.statement_ids() == ["start", "w1", "w2", "w3", "w4", "w5", "goal", "w6", "boxClick", "k1"]
