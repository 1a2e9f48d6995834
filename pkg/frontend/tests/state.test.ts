import { describe, expect, it } from "vitest";

import type { ApiClient } from "../src/api.js";
import { SessionStore, type AskResult } from "../src/state.js";
import type { HistoryEntry, SessionView } from "../src/types.js";

function view(overrides: Partial<SessionView> = {}): SessionView {
  return {
    frame_id: "f-0",
    sim_time: 0,
    action_category: "go_straight",
    index: 0,
    total: 100,
    playing: false,
    mode: "replay",
    ...overrides,
  };
}

class FakeApi {
  current = view();
  log: HistoryEntry[] = [];
  askDelayMs = 0;
  askCalls: Array<{ frameId: string; question: string }> = [];
  controlLog: string[] = [];

  frameUrl(id: string) {
    return `/api/frames/${id}`;
  }

  async session(): Promise<SessionView> {
    return this.current;
  }

  async history(): Promise<HistoryEntry[]> {
    return [...this.log];
  }

  async control(command: string, arg?: number): Promise<SessionView> {
    this.controlLog.push(`${command}:${arg ?? ""}`);
    if (command === "step") this.current = view({ index: this.current.index + 1 });
    if (command === "seek") this.current = view({ index: arg ?? 0 });
    return this.current;
  }

  async ask(frameId: string, question: string) {
    this.askCalls.push({ frameId, question });
    if (this.askDelayMs) {
      await new Promise((r) => setTimeout(r, this.askDelayMs));
    }
    this.log.push({
      timestamp: "t",
      frame_id: frameId,
      action_category: "go_straight",
      question,
      answers: [{ text: "Because the road is clear.", prob: 0.9 }],
      chosen: "Because the road is clear.",
    });
    return {
      answers: [
        { text: "Because the road is clear.", prob: 0.9 },
        { text: "Because the traffic light is red.", prob: 0.1 },
      ],
      latency_ms: 1.0,
    };
  }
}

function makeStore(api: FakeApi) {
  const events: Record<string, unknown[]> = {
    session: [],
    answers: [],
    history: [],
    errors: [],
  };
  const store = new SessionStore(
    api as unknown as ApiClient,
    {
      onSession: (v) => events.session!.push(v),
      onAnswers: (r) => events.answers!.push(r),
      onHistory: (h) => events.history!.push(h),
      onError: (m) => events.errors!.push(m),
    },
    60_000,
  );
  return { store, events };
}

describe("SessionStore.ask", () => {
  it("pins the ask to the frame shown at submit time", async () => {
    const api = new FakeApi();
    const { store } = makeStore(api);
    await store.refreshSession();
    api.current = view({ frame_id: "f-99", index: 99 }); // replay moved on
    const result = (await store.ask("Why is the car going straight?")) as AskResult;
    expect(result.frameId).toBe("f-0");
    expect(api.askCalls[0]!.frameId).toBe("f-0");
  });

  it("rejects empty questions without calling the service", async () => {
    const api = new FakeApi();
    const { store, events } = makeStore(api);
    await store.refreshSession();
    expect(await store.ask("   ")).toBeNull();
    expect(api.askCalls).toHaveLength(0);
    expect(events.errors!.length).toBe(1);
  });

  it("allows only one in-flight ask", async () => {
    const api = new FakeApi();
    api.askDelayMs = 30;
    const { store, events } = makeStore(api);
    await store.refreshSession();
    const first = store.ask("q1");
    const second = await store.ask("q2");
    expect(second).toBeNull();
    expect(events.errors!.length).toBe(1);
    expect(await first).not.toBeNull();
    expect(api.askCalls).toHaveLength(1);
  });

  it("refreshes the history after an answer arrives", async () => {
    const api = new FakeApi();
    const { store, events } = makeStore(api);
    await store.refreshSession();
    await store.ask("why?");
    const lastHistory = events.history!.at(-1) as HistoryEntry[];
    expect(lastHistory).toHaveLength(1);
    expect(lastHistory[0]!.question).toBe("why?");
  });
});

describe("SessionStore.control", () => {
  it("queues control commands in click order", async () => {
    const api = new FakeApi();
    const { store } = makeStore(api);
    await store.refreshSession();
    await Promise.all([
      store.control("seek", 5),
      store.control("step"),
      store.control("step"),
    ]);
    expect(api.controlLog).toEqual(["seek:5", "step:", "step:"]);
    expect(store.session?.index).toBe(7);
  });

  it("surfaces control errors without breaking the session", async () => {
    const api = new FakeApi();
    api.control = async () => {
      throw new Error("boom");
    };
    const { store, events } = makeStore(api);
    await store.refreshSession();
    expect(await store.control("step")).toBeNull();
    expect(events.errors!.length).toBe(1);
    expect(store.session).not.toBeNull();
  });
});
