import { HitPayload, QualifyReply, SubmitReply } from "./schema";

// Same-origin by default (the dev server proxies /api); tests point this at
// an ephemeral server.
let base = "";

export function setBase(url: string) {
  base = url.replace(/\/+$/, "");
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

const ATTEMPTS = 3;

/** Fetch with retry on network-level failure only; HTTP errors throw ApiError. */
async function request(path: string, init?: RequestInit): Promise<unknown | null> {
  let lastErr: unknown = new Error("unreachable");
  for (let attempt = 0; attempt < ATTEMPTS; attempt++) {
    let res: Response;
    try {
      res = await fetch(base + path, init);
    } catch (err) {
      lastErr = err;
      await new Promise((r) => setTimeout(r, 150 * (attempt + 1)));
      continue;
    }
    if (res.status === 204) return null;
    let body: unknown;
    try {
      body = await res.json();
    } catch {
      body = undefined;
    }
    if (!res.ok) {
      const detail = (body as { detail?: string } | undefined)?.detail;
      throw new ApiError(res.status, detail ?? res.statusText);
    }
    return body;
  }
  throw lastErr;
}

export async function qualify(workerId: string): Promise<QualifyReply> {
  const body = await request("/api/qualify", {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ worker_id: workerId }),
  });
  return QualifyReply.parse(body);
}

/** The worker's next unfinished HIT, or null when the study is complete. */
export async function nextHit(workerId: string): Promise<HitPayload | null> {
  const body = await request("/api/hit?worker_id=" + encodeURIComponent(workerId));
  return body === null ? null : HitPayload.parse(body);
}

export async function submitResponse(
  workerId: string, reviewId: string, label: string, confidence: number,
): Promise<SubmitReply> {
  const body = await request("/api/response", {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({
      worker_id: workerId,
      review_id: reviewId,
      label,
      confidence,
    }),
  });
  return SubmitReply.parse(body);
}
