import { describe, expect, it } from "vitest";

import {
  badgeLabel,
  expectedAnswer,
  formatClock,
  formatProb,
  isCorrect,
  sortedAnswers,
} from "../src/format.js";
import { PRESETS } from "../src/types.js";

describe("formatProb", () => {
  it("renders exactly four decimals", () => {
    expect(formatProb(0.5)).toBe("0.5000");
    expect(formatProb(0.98765432)).toBe("0.9877");
    expect(formatProb(1e-7)).toBe("0.0000");
    expect(formatProb(1)).toBe("1.0000");
  });
});

describe("sortedAnswers", () => {
  it("sorts descending without mutating the input", () => {
    const input = [
      { text: "b", prob: 0.2 },
      { text: "a", prob: 0.7 },
      { text: "c", prob: 0.1 },
    ];
    const out = sortedAnswers(input);
    expect(out.map((a) => a.text)).toEqual(["a", "b", "c"]);
    expect(input[0]!.text).toBe("b");
  });
});

describe("ground truth lookup", () => {
  it("knows the canonical answer of every category", () => {
    for (const [category, preset] of Object.entries(PRESETS)) {
      expect(expectedAnswer(category)).toBe(preset.answer);
      expect(isCorrect(category, preset.answer)).toBe(true);
      expect(isCorrect(category, "Because the moon is full.")).toBe(false);
    }
    expect(isCorrect("hovering", "x")).toBeUndefined();
  });

  it("offers presets for all five categories", () => {
    expect(Object.keys(PRESETS)).toHaveLength(5);
    const questions = new Set(Object.values(PRESETS).map((p) => p.question));
    expect(questions.size).toBe(5);
  });
});

describe("labels", () => {
  it("maps categories to badges and falls back to the raw name", () => {
    expect(badgeLabel("turn_left_t")).toBe("turning left at T-junction");
    expect(badgeLabel("warp")).toBe("warp");
  });

  it("formats the clock", () => {
    expect(formatClock(1.5)).toBe("1.50 s");
  });
});
