import { boot } from "./ui";

boot(document.getElementById("app") as HTMLElement);
