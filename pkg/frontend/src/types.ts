export interface SessionView {
  frame_id: string;
  sim_time: number;
  action_category: string;
  index: number;
  total: number;
  playing: boolean;
  mode: string;
  track_id?: string;
}

export interface Answer {
  text: string;
  prob: number;
}

export interface AskResponse {
  answers: Answer[];
  latency_ms: number;
}

export interface HistoryEntry {
  timestamp: string;
  frame_id: string;
  action_category: string;
  question: string;
  answers: Answer[];
  chosen: string;
}

export type ControlCommand = "play" | "pause" | "step" | "seek";

/** The five canonical question/answer pairs, keyed by action category. */
export const PRESETS: Record<string, { question: string; answer: string }> = {
  go_straight: {
    question: "Why is the car going straight?",
    answer: "Because the road is clear.",
  },
  turn_left: {
    question: "Why is the car turning to the left?",
    answer: "Because the road is bending to the left.",
  },
  turn_left_t: {
    question: "Why is the car turning left at T-junction?",
    answer:
      "Because there is no obstacle on the right side and turning left can be performed safely.",
  },
  turn_right: {
    question: "Why is the car turning to the right?",
    answer: "Because the road is bending to the right.",
  },
  turn_right_t: {
    question: "Why is the car turning right at T-junction?",
    answer:
      "Because there is no obstacle on the left side and turning right can be performed safely.",
  },
};
