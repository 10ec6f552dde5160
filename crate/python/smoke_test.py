"""Smoke test for the Python bindings: python python/smoke_test.py"""

from pathlib import Path

import verbot

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def main():
    assert verbot.tokenize("Down three hundred mm") == ["down", 300]
    assert verbot.parse_number_words(["one", "hundred", "five"]) == 105
    assert "pick" in verbot.command_heads()
    assert verbot.canonical("move up") == "up"
    assert isinstance(verbot.parse("pick part and place top"), dict)
    try:
        verbot.parse("fly away")
    except ValueError as e:
        assert "UnknownCommand" in str(e)
    else:
        raise AssertionError("bad line parsed")

    bot = verbot.Interpreter()
    assert bot.submit("up")["error"]["kind"] == "NotRunning"
    assert bot.submit("start robot")["error"] is None
    bot.submit("up 30 then left 40")
    events, idle = bot.drain()
    assert idle and bot.is_idle()
    robot = bot.snapshot()["robot"]
    assert (robot["y"], robot["z"]) == (40.0, 330.0), robot
    assert any(e["kind"] == "motionFinished" for e in events)

    bot.submit("save position far and right 300")
    bot.drain()
    bot.submit("position far")
    bot.tick()
    bot.stop()
    kinds = [e["kind"] for e in bot.tick()]
    assert "stopped" in kinds and bot.queue_len == 0

    report = verbot.run_transcript(
        (SCENARIOS / "helical.txt").read_text(),
        scene=str(SCENARIOS / "helical_gear.scene"),
        expect=(SCENARIOS / "helical.assert").read_text(),
    )
    assert report["assertionFailures"] == [], report["assertionFailures"]
    assert all(s["completed"] for s in report["steps"])
    print("python smoke test passed")


if __name__ == "__main__":
    main()
