import type { Answer } from "./types.js";
import { PRESETS } from "./types.js";

/** Probabilities are always rendered with 4 decimals, exactly as the
 * service payload rounds on display. */
export function formatProb(p: number): string {
  return p.toFixed(4);
}

export function formatClock(simTime: number): string {
  return `${simTime.toFixed(2)} s`;
}

const BADGES: Record<string, string> = {
  go_straight: "going straight",
  turn_left: "turning left",
  turn_right: "turning right",
  turn_left_t: "turning left at T-junction",
  turn_right_t: "turning right at T-junction",
};

export function badgeLabel(category: string): string {
  return BADGES[category] ?? category;
}

/** Defensive re-sort: the service already ranks answers, but the panel
 * invariant (non-increasing bars) must hold regardless. */
export function sortedAnswers(answers: Answer[]): Answer[] {
  return [...answers].sort((a, b) => b.prob - a.prob);
}

/** Ground truth is known in replay mode: the canonical answer of the
 * category the frame carries. Returns undefined when unknown. */
export function expectedAnswer(category: string): string | undefined {
  return PRESETS[category]?.answer;
}

export function isCorrect(category: string, chosen: string): boolean | undefined {
  const expected = expectedAnswer(category);
  return expected === undefined ? undefined : expected === chosen;
}
