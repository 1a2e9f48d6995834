import { ApiClient } from "./api.js";
import {
  badgeLabel,
  formatClock,
  formatProb,
  isCorrect,
  sortedAnswers,
} from "./format.js";
import { SessionStore, type AskResult } from "./state.js";
import type { HistoryEntry, SessionView } from "./types.js";
import { PRESETS } from "./types.js";

function el<T extends HTMLElement>(doc: Document, id: string): T {
  const node = doc.getElementById(id);
  if (!node) throw new Error(`missing #${id} in dashboard markup`);
  return node as T;
}

/** Wire the dashboard into an existing document. Returns the store so a
 * test harness can drive the same code paths a user would. */
export function mountDashboard(doc: Document, api: ApiClient, pollMs = 1000) {
  const frame = el<HTMLImageElement>(doc, "frame");
  const badge = el<HTMLElement>(doc, "badge");
  const clock = el<HTMLElement>(doc, "clock");
  const seek = el<HTMLInputElement>(doc, "seek");
  const playBtn = el<HTMLButtonElement>(doc, "play");
  const stepBtn = el<HTMLButtonElement>(doc, "step");
  const presets = el<HTMLElement>(doc, "presets");
  const form = el<HTMLFormElement>(doc, "askform");
  const questionBox = el<HTMLInputElement>(doc, "question");
  const askBtn = el<HTMLButtonElement>(doc, "askbtn");
  const answers = el<HTMLOListElement>(doc, "answers");
  const verdict = el<HTMLElement>(doc, "verdict");
  const history = el<HTMLOListElement>(doc, "history");
  const banner = el<HTMLElement>(doc, "banner");

  let bannerTimer: ReturnType<typeof setTimeout> | null = null;

  const store = new SessionStore(
    api,
    {
      onSession(view: SessionView) {
        const url = api.frameUrl(view.frame_id);
        if (frame.getAttribute("src") !== url) frame.setAttribute("src", url);
        frame.dataset.frameId = view.frame_id;
        badge.textContent = badgeLabel(view.action_category);
        badge.dataset.category = view.action_category;
        clock.textContent = `${formatClock(view.sim_time)} · frame ${view.index + 1}/${view.total}`;
        seek.max = String(view.total - 1);
        if (doc.activeElement !== seek) seek.value = String(view.index);
        playBtn.textContent = view.playing ? "pause" : "play";
      },
      onAnswers(result: AskResult) {
        answers.replaceChildren();
        const ranked = sortedAnswers(result.answers);
        for (const [rank, answer] of ranked.entries()) {
          const item = doc.createElement("li");
          const bar = doc.createElement("span");
          bar.className = "bar";
          bar.style.width = `${Math.round(answer.prob * 100)}%`;
          const prob = doc.createElement("span");
          prob.className = "prob";
          prob.textContent = formatProb(answer.prob);
          const text = doc.createElement("span");
          text.className = "text";
          text.textContent = answer.text;
          item.append(bar, prob, text);
          if (rank === 0) item.classList.add("top");
          answers.append(item);
        }
        const top = ranked[0];
        const good = top ? isCorrect(result.category, top.text) : undefined;
        verdict.textContent =
          good === undefined ? "" : good ? "matches ground truth" : "wrong answer";
        verdict.className = good ? "good" : "bad";
      },
      onHistory(entries: HistoryEntry[]) {
        history.replaceChildren();
        for (const entry of [...entries].reverse()) {
          const item = doc.createElement("li");
          item.textContent =
            `[${badgeLabel(entry.action_category)}] ${entry.question} -> ` +
            `${entry.chosen} (${formatProb(entry.answers[0]?.prob ?? 0)})`;
          history.append(item);
        }
      },
      onError(message: string) {
        banner.textContent = message;
        banner.classList.add("visible");
        if (bannerTimer) clearTimeout(bannerTimer);
        bannerTimer = setTimeout(() => banner.classList.remove("visible"), 4000);
      },
      onBusy(busy: boolean) {
        askBtn.disabled = busy;
      },
    },
    pollMs,
  );

  playBtn.addEventListener("click", () => {
    void store.control(store.session?.playing ? "pause" : "play");
  });
  stepBtn.addEventListener("click", () => {
    void store.control("step");
  });
  seek.addEventListener("change", () => {
    void store.control("seek", Number(seek.value));
  });

  for (const { question } of Object.values(PRESETS)) {
    const button = doc.createElement("button");
    button.type = "button";
    button.textContent = question;
    button.addEventListener("click", () => {
      questionBox.value = question;
      void store.ask(question);
    });
    presets.append(button);
  }

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    void store.ask(questionBox.value);
  });

  return store;
}
