import type {
  AskResponse,
  ControlCommand,
  HistoryEntry,
  SessionView,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function parse<T>(resp: Response): Promise<T> {
  const body = await resp.json().catch(() => ({}));
  if (!resp.ok) {
    const detail = (body as { error?: string }).error ?? resp.statusText;
    throw new ApiError(resp.status, detail);
  }
  return body as T;
}

/** Thin typed client for the review service; every number shown in the UI
 * comes straight out of these payloads. */
export class ApiClient {
  constructor(private base: string = "") {}

  frameUrl(frameId: string): string {
    return `${this.base}/api/frames/${encodeURIComponent(frameId)}`;
  }

  async session(): Promise<SessionView> {
    return parse(await fetch(`${this.base}/api/session`));
  }

  async control(command: ControlCommand, arg?: number): Promise<SessionView> {
    return parse(
      await fetch(`${this.base}/api/control`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(arg === undefined ? { command } : { command, arg }),
      }),
    );
  }

  async ask(frameId: string, question: string): Promise<AskResponse> {
    return parse(
      await fetch(`${this.base}/api/ask`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ frame_id: frameId, question }),
      }),
    );
  }

  async history(): Promise<HistoryEntry[]> {
    const body = await parse<{ entries: HistoryEntry[] }>(
      await fetch(`${this.base}/api/history`),
    );
    return body.entries;
  }
}
