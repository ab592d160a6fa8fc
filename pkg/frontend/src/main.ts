/**
 * DOM glue for the labeling console.
 *
 * Keyboard-first: number keys assign the matching label word to the
 * highlighted card and advance, arrows move, Enter submits once every
 * pending item has a choice. The session is re-synced on an interval,
 * so the page survives reloads and service restarts.
 */

import { httpClient } from "./api.js";
import { LabelingSession } from "./session.js";

const POLL_MS = 700;

const session = new LabelingSession(httpClient());
let cursor = 0;

const app = document.getElementById("app");
if (!app) {
  throw new Error("missing #app container");
}

function el(tag: string, className: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

function banner(): HTMLElement {
  const phaseText: Record<string, string> = {
    connecting: "connecting to the annotation service...",
    waiting: "waiting for the next query batch",
    training: "labels received; the model is updating",
    done: "all rounds complete - thanks!",
    error: `connection problem: ${session.lastError ?? "unknown"} (retrying)`,
    labeling: "",
  };
  const header = el("div", "header");
  header.append(el("span", "title", "poolforge labeling console"));
  const round = session.round >= 0 ? `round ${session.round}` : "";
  header.append(el("span", "round", round));
  const note = phaseText[session.phase] ?? "";
  if (note) {
    header.append(el("div", `banner banner-${session.phase}`, note));
  }
  return header;
}

function labelBar(): HTMLElement {
  const bar = el("div", "label-bar");
  session.labelWords.forEach((word, i) => {
    bar.append(el("span", "label-key", `${i + 1} = ${word}`));
  });
  bar.append(el("span", "label-key hint", "arrows move - enter submits"));
  return bar;
}

function cards(): HTMLElement {
  const list = el("div", "cards");
  const pending = session.pendingItems();
  if (cursor >= pending.length) {
    cursor = Math.max(0, pending.length - 1);
  }
  pending.forEach((item, index) => {
    const card = el("div", index === cursor ? "card current" : "card");
    card.dataset.id = String(item.id);
    card.append(el("div", "card-id", `#${item.id}`));
    card.append(el("div", "card-text", item.text));
    const chosen = session.choices.get(item.id);
    const labels = el("div", "card-labels");
    session.labelWords.forEach((word, li) => {
      const btn = el("button", li === chosen ? "label chosen" : "label", word);
      btn.addEventListener("click", () => {
        session.choose(item.id, li);
        cursor = Math.min(index + 1, pending.length - 1);
        render();
      });
      labels.append(btn);
    });
    card.append(labels);
    card.addEventListener("click", () => {
      cursor = index;
      render();
    });
    list.append(card);
  });
  return list;
}

function footer(): HTMLElement {
  const foot = el("div", "footer");
  const total = session.pendingIds.size;
  const chosen = [...session.pendingIds].filter((id) =>
    session.choices.has(id),
  ).length;
  foot.append(el("span", "progress", total ? `${chosen}/${total} labeled` : ""));
  const submit = el("button", "submit", "submit labels") as HTMLButtonElement;
  submit.disabled = !session.readyToSubmit();
  submit.addEventListener("click", () => {
    void submitNow();
  });
  foot.append(submit);
  for (const rejection of session.rejections) {
    foot.append(
      el("div", "rejection", `id ${rejection.id} rejected: ${rejection.reason}`),
    );
  }
  return foot;
}

function render(): void {
  app!.replaceChildren(banner());
  if (session.phase === "labeling") {
    app!.append(labelBar(), cards(), footer());
  }
}

async function submitNow(): Promise<void> {
  if (!session.readyToSubmit()) {
    return;
  }
  await session.submit();
  render();
}

document.addEventListener("keydown", (event) => {
  if (session.phase !== "labeling") {
    return;
  }
  const pending = session.pendingItems();
  if (event.key === "ArrowDown" || event.key === "j") {
    cursor = Math.min(cursor + 1, pending.length - 1);
  } else if (event.key === "ArrowUp" || event.key === "k") {
    cursor = Math.max(cursor - 1, 0);
  } else if (event.key === "Enter") {
    void submitNow();
    return;
  } else {
    const index = Number.parseInt(event.key, 10) - 1;
    const item = pending[cursor];
    if (!Number.isNaN(index) && item && session.choose(item.id, index)) {
      cursor = Math.min(cursor + 1, pending.length - 1);
    } else {
      return;
    }
  }
  event.preventDefault();
  render();
});

async function poll(): Promise<void> {
  await session.refresh();
  render();
}

async function start(): Promise<void> {
  for (;;) {
    try {
      await session.connect();
      break;
    } catch {
      render();
      await new Promise((resolve) => setTimeout(resolve, POLL_MS));
    }
  }
  await poll();
  setInterval(() => {
    void poll();
  }, POLL_MS);
}

void start();
