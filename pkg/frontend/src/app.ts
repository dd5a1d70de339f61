// DOM wiring: a dependency-free single-page client with two screens
// (live chat + rating, pairwise comparison) over the view-state layer.
// Screens re-render from state after every action; the session id lives
// in the URL hash so a reload resumes the transcript from the server.

import { Client, SessionView } from "./api.js";
import { ChatView, PairwiseView, SCALE_OPTIONS, Scale } from "./state.js";

const DEFAULT_BASE = "http://127.0.0.1:8700";

function baseUrl(): string {
  return localStorage.getItem("dialogweave.base") ?? DEFAULT_BASE;
}

function raterId(): string {
  let id = localStorage.getItem("dialogweave.rater");
  if (!id) {
    id = `rater-${Math.random().toString(36).slice(2, 10)}`;
    localStorage.setItem("dialogweave.rater", id);
  }
  return id;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  node.append(...children);
  return node;
}

function scaleFieldset(
  legend: string,
  name: string,
  selected: Scale | null,
  onPick: (value: Scale) => void,
): HTMLFieldSetElement {
  // exactly five discrete options; no free-form numeric entry
  const fieldset = el("fieldset", { class: "scale" }, el("legend", {}, legend));
  for (const value of SCALE_OPTIONS) {
    const input = el("input", {
      type: "radio",
      name,
      id: `${name}-${value}`,
      value: String(value),
    }) as HTMLInputElement;
    input.checked = selected === value;
    input.addEventListener("change", () => onPick(value));
    fieldset.append(input, el("label", { for: `${name}-${value}` }, String(value)));
  }
  return fieldset;
}

function goalCardPanel(session: SessionView | null, goal: ChatView["goalCard"]): HTMLElement {
  const panel = el("section", { class: "goal-card", "aria-label": "goal card" });
  if (!goal) {
    panel.append(el("p", {}, "No active session."));
    return panel;
  }
  panel.append(el("h3", {}, `Your goal (${session?.model_name ?? "?"})`));
  for (const [domain, dg] of Object.entries(goal)) {
    const constraints = Object.entries(dg.constraints)
      .map(([slot, value]) => `${slot} = ${value}`)
      .join(", ");
    const requests = dg.requests.length ? `find out: ${dg.requests.join(", ")}` : "";
    panel.append(
      el(
        "p",
        {},
        el("strong", {}, domain),
        ` - ${constraints || "no constraints"}${requests ? "; " + requests : ""}`,
      ),
    );
  }
  return panel;
}

function transcriptList(view: ChatView): HTMLElement {
  const list = el("ol", { class: "transcript", "aria-label": "transcript" });
  for (const message of view.messages) {
    const badges =
      message.speaker === "system" && message.state !== null
        ? el(
            "span",
            { class: "badges" },
            ` [${message.state}${message.knowledgeKind ? " | " + message.knowledgeKind : ""}]`,
          )
        : "";
    list.append(
      el(
        "li",
        { class: `${message.speaker}${message.pending ? " pending" : ""}` },
        el("span", { class: "speaker" }, message.speaker === "user" ? "you" : "bot"),
        ` ${message.text}${message.pending ? " (sending...)" : ""}`,
        badges,
      ),
    );
  }
  return list;
}

export function renderChat(root: HTMLElement, view: ChatView, rerender: () => void): void {
  root.replaceChildren();
  const session = view.sessionId
    ? ({ id: view.sessionId, model_name: view.modelName ?? "?" } as SessionView)
    : null;
  root.append(goalCardPanel(session, view.goalCard));

  if (view.error) {
    root.append(el("p", { class: "banner error", role: "alert" }, view.error));
  }

  if (!view.sessionId) {
    const modelInput = el("input", {
      id: "model-name",
      value: "pivot-toy",
      "aria-label": "model name",
    }) as HTMLInputElement;
    const startButton = el("button", { id: "start" }, "Start session") as HTMLButtonElement;
    startButton.addEventListener("click", async () => {
      await view.start(modelInput.value);
      if (view.sessionId) {
        location.hash = `#/chat/${view.sessionId}`;
      }
      rerender();
    });
    root.append(el("div", { class: "controls" }, modelInput, startButton));
    return;
  }

  root.append(transcriptList(view));

  if (view.phase === "chatting") {
    const composer = el("textarea", {
      id: "composer",
      rows: "2",
      "aria-label": "message",
    }) as HTMLTextAreaElement;
    composer.value = view.composer;
    composer.addEventListener("input", () => {
      view.composer = composer.value;
      send.disabled = !view.canSend;
    });
    const send = el("button", { id: "send" }, "Send") as HTMLButtonElement;
    send.disabled = !view.canSend;
    send.addEventListener("click", async () => {
      await view.send();
      rerender();
    });
    const finish = el("button", { id: "finish" }, "Finish & rate") as HTMLButtonElement;
    finish.addEventListener("click", () => {
      view.finishChat();
      rerender();
    });
    root.append(el("div", { class: "controls" }, composer, send, finish));
    return;
  }

  if (view.phase === "rating") {
    let appropriateness: Scale | null = null;
    let engagingness: Scale | null = null;
    const success = el("input", { type: "checkbox", id: "success" }) as HTMLInputElement;
    const submit = el("button", { id: "submit-rating" }, "Submit rating") as HTMLButtonElement;
    submit.disabled = true;
    const refresh = () => {
      submit.disabled = appropriateness === null || engagingness === null;
    };
    const form = el(
      "form",
      { class: "rating", "aria-label": "rating form" },
      el("label", { for: "success" }, "All requests completed?"),
      success,
      scaleFieldset("Appropriateness", "appropriateness", null, (v) => {
        appropriateness = v;
        refresh();
      }),
      scaleFieldset("Engagingness", "engagingness", null, (v) => {
        engagingness = v;
        refresh();
      }),
      submit,
    );
    form.addEventListener("submit", (event) => event.preventDefault());
    submit.addEventListener("click", async () => {
      if (appropriateness === null || engagingness === null) {
        return;
      }
      await view.submitRating(success.checked, appropriateness, engagingness);
      rerender();
    });
    root.append(form);
    return;
  }

  root.append(el("p", { class: "banner done" }, "Session rated - thank you!"));
}

export function renderPairwise(root: HTMLElement, view: PairwiseView, rerender: () => void): void {
  root.replaceChildren();
  if (view.error) {
    root.append(el("p", { class: "banner error", role: "alert" }, view.error));
  }
  if (!view.dialogA || !view.dialogB) {
    const idA = el("input", { id: "dialog-a", placeholder: "dialog A id" }) as HTMLInputElement;
    const idB = el("input", { id: "dialog-b", placeholder: "dialog B id" }) as HTMLInputElement;
    const load = el("button", { id: "load-pair" }, "Load pair") as HTMLButtonElement;
    load.addEventListener("click", async () => {
      try {
        await view.load(idA.value.trim(), idB.value.trim());
      } catch (err) {
        view.error = err instanceof Error ? err.message : String(err);
      }
      rerender();
    });
    root.append(el("div", { class: "controls" }, idA, idB, load));
    return;
  }

  const pane = (label: "A" | "B", session: SessionView) =>
    el(
      "section",
      { class: "pane", "aria-label": `dialog ${label}` },
      el("h3", {}, `Dialog ${label}`),
      el(
        "ol",
        { class: "transcript" },
        ...session.turns.map((turn) =>
          el(
            "li",
            { class: turn.speaker },
            el("span", { class: "speaker" }, turn.speaker === "user" ? "you" : "bot"),
            ` ${turn.text}`,
          ),
        ),
      ),
    );
  root.append(el("div", { class: "side-by-side" }, pane("A", view.dialogA), pane("B", view.dialogB)));

  const overall = el("fieldset", { class: "overall" }, el("legend", {}, "Better dialog overall"));
  for (const choice of ["a", "tie", "b"] as const) {
    const input = el("input", {
      type: "radio",
      name: "overall",
      id: `overall-${choice}`,
      value: choice,
    }) as HTMLInputElement;
    input.checked = view.overall === choice;
    input.addEventListener("change", () => {
      view.overall = choice;
      rerender();
    });
    overall.append(input, el("label", { for: `overall-${choice}` }, choice.toUpperCase()));
  }

  const submit = el("button", { id: "submit-pairwise" }, "Submit judgment") as HTMLButtonElement;
  submit.disabled = !view.canSubmit;
  submit.addEventListener("click", async () => {
    await view.submit();
    rerender();
  });

  const hint = view.canSubmit
    ? ""
    : el("p", { class: "hint" }, `still needed: ${view.missing.join(", ")}`);

  root.append(
    overall,
    scaleFieldset("Appropriateness (A)", "a-app", view.scores.aAppropriateness, (v) => {
      view.setScore("aAppropriateness", v);
      rerender();
    }),
    scaleFieldset("Engagingness (A)", "a-eng", view.scores.aEngagingness, (v) => {
      view.setScore("aEngagingness", v);
      rerender();
    }),
    scaleFieldset("Appropriateness (B)", "b-app", view.scores.bAppropriateness, (v) => {
      view.setScore("bAppropriateness", v);
      rerender();
    }),
    scaleFieldset("Engagingness (B)", "b-eng", view.scores.bEngagingness, (v) => {
      view.setScore("bEngagingness", v);
      rerender();
    }),
    submit,
    hint,
    view.submitted ? el("p", { class: "banner done" }, "Judgment recorded.") : "",
  );
}

export function mount(): void {
  const client = new Client(baseUrl(), raterId());
  const chat = new ChatView(client);
  const pairwise = new PairwiseView(client);
  const root = document.getElementById("app");
  if (!root) {
    throw new Error("missing #app mount point");
  }

  const render = () => {
    const hash = location.hash || "#/chat";
    const [, screen, sessionId] = hash.split("/");
    document
      .querySelectorAll("nav a")
      .forEach((a) => a.classList.toggle("active", a.getAttribute("href") === `#/${screen}`));
    if (screen === "pairwise") {
      renderPairwise(root, pairwise, render);
    } else {
      if (sessionId && chat.sessionId !== sessionId) {
        void chat.resume(sessionId).then(render, (err) => {
          chat.error = err instanceof Error ? err.message : String(err);
          render();
        });
      }
      renderChat(root, chat, render);
    }
  };

  window.addEventListener("hashchange", render);
  render();
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  mount();
}
