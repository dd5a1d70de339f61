import { describe, expect, it, vi } from "vitest";

import { ApiError, Client, TransportFailure } from "../src/api.js";

function fakeFetch(status: number, body: unknown) {
  return vi.fn(async () => ({
    ok: status >= 200 && status < 300,
    status,
    json: async () => body,
  })) as unknown as typeof fetch;
}

describe("Client", () => {
  it("posts session creation with rater header", async () => {
    const fetchFn = fakeFetch(201, { id: "s1", turns: [] });
    const client = new Client("http://svc", "rater-9", fetchFn);
    const session = await client.createSession("pivot-toy");
    expect(session.id).toBe("s1");
    const [url, init] = (fetchFn as any).mock.calls[0];
    expect(url).toBe("http://svc/sessions");
    expect(init.method).toBe("POST");
    expect(init.headers["X-Rater-Id"]).toBe("rater-9");
    expect(JSON.parse(init.body)).toEqual({ model_name: "pivot-toy" });
  });

  it("maps service errors to ApiError with code and status", async () => {
    const client = new Client("http://svc", "r", fakeFetch(409, {
      code: "conflict",
      message: "already rated",
    }));
    const error = await client
      .submitRating("s1", { success: true, appropriateness: 4, engagingness: 4 })
      .catch((e) => e);
    expect(error).toBeInstanceOf(ApiError);
    expect(error.status).toBe(409);
    expect(error.code).toBe("conflict");
    expect(error.message).toBe("already rated");
  });

  it("wraps network failures as TransportFailure", async () => {
    const fetchFn = vi.fn(async () => {
      throw new Error("ECONNREFUSED");
    }) as unknown as typeof fetch;
    const client = new Client("http://svc", "r", fetchFn);
    await expect(client.getSession("s1")).rejects.toBeInstanceOf(TransportFailure);
  });

  it("addresses message, rating, and pairwise endpoints", async () => {
    const fetchFn = fakeFetch(200, { status: "ok", reply: "x", state: "odd:", knowledge_kind: "empty", sessions: [] });
    const client = new Client("http://svc", "r", fetchFn);
    await client.postMessage("sid", "hello");
    await client.submitPairwise({
      dialog_a_id: "a",
      dialog_b_id: "b",
      overall: "tie",
      a_appropriateness: 3,
      a_engagingness: 3,
      b_appropriateness: 3,
      b_engagingness: 3,
    });
    await client.listSessions();
    const urls = (fetchFn as any).mock.calls.map((c: any[]) => c[0]);
    expect(urls).toEqual(["http://svc/sessions/sid/messages", "http://svc/pairwise", "http://svc/sessions"]);
  });
});
