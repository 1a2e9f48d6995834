import { ApiClient } from "./api.js";
import type {
  Answer,
  ControlCommand,
  HistoryEntry,
  SessionView,
} from "./types.js";

export interface AskResult {
  frameId: string;
  category: string;
  question: string;
  answers: Answer[];
  latencyMs: number;
}

export interface Listener {
  onSession?(view: SessionView): void;
  onAnswers?(result: AskResult): void;
  onHistory?(entries: HistoryEntry[]): void;
  onError?(message: string): void;
  onBusy?(busy: boolean): void;
}

/** Client-side session store.
 *
 * Polls the service, serializes control commands through a queue, allows a
 * single in-flight ask and pins each ask to the frame that was on screen
 * when it was submitted.
 */
export class SessionStore {
  session: SessionView | null = null;
  private asking = false;
  private controlQueue: Promise<unknown> = Promise.resolve();
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private api: ApiClient,
    private listener: Listener,
    private pollMs = 1000,
  ) {}

  async start(): Promise<void> {
    await this.refreshSession();
    await this.refreshHistory();
    this.timer = setInterval(() => {
      void this.refreshSession();
    }, this.pollMs);
  }

  stop(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
  }

  async refreshSession(): Promise<SessionView | null> {
    try {
      this.session = await this.api.session();
      this.listener.onSession?.(this.session);
      return this.session;
    } catch (err) {
      this.listener.onError?.(`session unavailable: ${(err as Error).message}`);
      return null;
    }
  }

  async refreshHistory(): Promise<void> {
    try {
      const entries = await this.api.history();
      this.listener.onHistory?.(entries);
    } catch (err) {
      this.listener.onError?.(`history unavailable: ${(err as Error).message}`);
    }
  }

  /** Controls are queued so rapid clicks arrive at the service in order. */
  control(command: ControlCommand, arg?: number): Promise<SessionView | null> {
    const next = this.controlQueue.then(async () => {
      try {
        this.session = await this.api.control(command, arg);
        this.listener.onSession?.(this.session);
        return this.session;
      } catch (err) {
        this.listener.onError?.(`control failed: ${(err as Error).message}`);
        return null;
      }
    });
    this.controlQueue = next;
    return next;
  }

  get busy(): boolean {
    return this.asking;
  }

  /** Ask about the currently displayed frame; at most one in flight. */
  async ask(question: string): Promise<AskResult | null> {
    const trimmed = question.trim();
    if (!trimmed) {
      this.listener.onError?.("type a question first");
      return null;
    }
    if (this.asking) {
      this.listener.onError?.("an answer is still on its way");
      return null;
    }
    if (this.session === null) {
      this.listener.onError?.("no session yet");
      return null;
    }
    const frameId = this.session.frame_id;
    const category = this.session.action_category;
    this.asking = true;
    this.listener.onBusy?.(true);
    try {
      const resp = await this.api.ask(frameId, trimmed);
      const result: AskResult = {
        frameId,
        category,
        question: trimmed,
        answers: resp.answers,
        latencyMs: resp.latency_ms,
      };
      this.listener.onAnswers?.(result);
      await this.refreshHistory();
      return result;
    } catch (err) {
      this.listener.onError?.(`ask failed: ${(err as Error).message}`);
      return null;
    } finally {
      this.asking = false;
      this.listener.onBusy?.(false);
    }
  }
}
